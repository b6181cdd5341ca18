use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::Serialize;

use sozloc::config::RunConfig;
use sozloc::dataset::{load_manifest, save_dataset, BinaryLabel, Dataset, Label, MANIFEST_FORMAT, MANIFEST_VERSION};
use sozloc::eki::{fit_eki, EkiModel, EKI_FORMAT, EKI_VERSION};
use sozloc::eval::{analyze_dataset, ks_normality_test, welch_one_sided_t, AblationRow, GroupBy, TestOutcome};
use sozloc::features::{Feature, FeatureVector};
use sozloc::fusion::{analyze_ic, classify, write_json, ClassificationReport, Localization, REPORT_FORMAT, REPORT_VERSION};
use sozloc::io::write_atomic;
use sozloc::noise_net::{
    prepare_input, train_binary, train_multiclass_baseline, NoiseNet, TrainingLog, CHECKPOINT_VERSION,
};
use sozloc::phantom::{generate_phantom_dataset, PhantomSpec};
use sozloc::report::{evaluate, EvaluateOptions, GateSource, EVALUATION_FORMAT, EVALUATION_VERSION};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn long_version() -> &'static str {
    Box::leak(
        format!(
            "{}\nmanifest {MANIFEST_FORMAT} v{MANIFEST_VERSION}\ncheckpoint SOZNET01 v{CHECKPOINT_VERSION}\n\
             eki model {EKI_FORMAT} v{EKI_VERSION}\nclassification report {REPORT_FORMAT} v{REPORT_VERSION}\n\
             evaluation report {EVALUATION_FORMAT} v{EVALUATION_VERSION}",
            env!("CARGO_PKG_VERSION")
        )
        .into_boxed_str(),
    )
}

#[derive(Parser)]
#[command(name = "sozloc", version, long_version = long_version(), about = "Classify rs-fMRI ICs into NOISE, RSN and SOZ")]
struct Cli {
    /// Run configuration (JSON); missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 runs everything on the calling thread.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic datasets with known ground truth.
    #[command(subcommand)]
    Phantom(PhantomCommand),
    /// Expert features.
    #[command(subcommand)]
    Features(FeaturesCommand),
    /// Train the binary NOISE gate on a labeled manifest.
    TrainNoise(TrainArgs),
    /// Train the three-class cost-sensitive CNN baseline.
    TrainSll(TrainArgs),
    /// Fit the expert-knowledge model on the RSN and SOZ ICs of a manifest.
    FitEki(FitEkiArgs),
    /// Label every IC of a manifest with trained models.
    Classify(ClassifyArgs),
    /// Largest-cluster SOZ areas.
    Localize(LocalizeArgs),
    /// Leave-one-patient-out evaluation of the full pipeline.
    Evaluate(EvaluateArgs),
    /// Leave-one-patient-out runs with each feature dropped in turn.
    Ablate(AblateArgs),
    /// Normality and one-sided mean-difference tests on plain-text samples.
    Stats(StatsArgs),
}

#[derive(Subcommand)]
enum PhantomCommand {
    Generate {
        /// Phantom spec (JSON); defaults to the `phantom` block of the config.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        patients: Option<usize>,
        /// Output directory; receives manifest.json, the files and truth.json.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum FeaturesCommand {
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        /// CSV with one row per IC.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch training log (JSON).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct FitEkiArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Zero one feature before fitting.
    #[arg(long)]
    drop: Option<Feature>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Noise-gate checkpoint from train-noise.
    #[arg(long)]
    dl: PathBuf,
    /// Expert model from fit-eki.
    #[arg(long)]
    eki: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LocalizeArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Classification report; only its SOZ calls are localized. Without it
    /// every IC is.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum GroupArg {
    Age,
    Sex,
}

#[derive(Clone, Copy, ValueEnum)]
enum GateArg {
    Loocv,
    Labels,
}

impl From<GateArg> for GateSource {
    fn from(g: GateArg) -> Self {
        match g {
            GateArg::Loocv => GateSource::Loocv,
            GateArg::Labels => GateSource::Labels,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Drop one feature from the expert model.
    #[arg(long)]
    ablate: Option<Feature>,
    /// Add per-group metrics.
    #[arg(long)]
    group: Option<GroupArg>,
    /// `labels` replaces the trained gate with the annotated NOISE flags.
    #[arg(long, value_enum, default_value = "loocv")]
    gate: GateArg,
    /// Also evaluate the three-class CNN baseline.
    #[arg(long)]
    baseline: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "loocv")]
    gate: GateArg,
}

#[derive(Args)]
struct StatsArgs {
    #[command(subcommand)]
    test: StatsTest,
}

#[derive(Subcommand)]
enum StatsTest {
    /// One-sample KS test against a normal fitted to the samples.
    Ks {
        /// Whitespace- or comma-separated numbers.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Welch t-test of H1: mean(a) > mean(b).
    Welch {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum CliError {
    Usage(String),
    Core(sozloc::Error),
}

impl From<sozloc::Error> for CliError {
    fn from(e: sozloc::Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                sozloc::Error::Numeric(_) => EXIT_NUMERIC,
                _ => EXIT_DATA,
            })
        }
    }
}

fn run(cli: Cli) -> CliResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| CliError::Usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let started = Instant::now();
    match cli.command {
        Command::Phantom(PhantomCommand::Generate { spec, patients, out }) => {
            phantom_generate(&cfg, spec.as_deref(), patients, cli.seed, &out)?
        }
        Command::Features(FeaturesCommand::Extract { manifest, out }) => features_extract(&cfg, &manifest, &out)?,
        Command::TrainNoise(a) => train(&cfg, &a, false)?,
        Command::TrainSll(a) => train(&cfg, &a, true)?,
        Command::FitEki(a) => fit(&cfg, &a)?,
        Command::Classify(a) => classify_cmd(&cfg, &a)?,
        Command::Localize(a) => localize(&cfg, &a)?,
        Command::Evaluate(a) => evaluate_cmd(&cfg, &a)?,
        Command::Ablate(a) => ablate(&cfg, &a)?,
        Command::Stats(a) => stats(&a)?,
    }
    info!("done in {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}

fn load_dataset(path: &Path) -> CliResult<Dataset> {
    let ds = load_manifest(path)?;
    info!("loaded {} ICs from {} patients", ds.len(), ds.patients.len());
    Ok(ds)
}

fn phantom_generate(
    cfg: &RunConfig,
    spec_path: Option<&Path>,
    patients: Option<usize>,
    seed: Option<u64>,
    out: &Path,
) -> CliResult {
    let mut spec = match spec_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<PhantomSpec>(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => cfg.phantom.clone(),
    };
    if let Some(n) = patients {
        spec.n_patients = n;
    }
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let ph = generate_phantom_dataset(&spec)?;
    let manifest = save_dataset(&ph.dataset, out)?;
    write_json(&out.join("truth.json"), &ph.truth)?;
    let counts = ph.dataset.class_counts();
    info!(
        "wrote {} ({} NOISE, {} RSN, {} SOZ)",
        manifest.display(),
        counts.noise,
        counts.rsn,
        counts.soz
    );
    Ok(())
}

fn label_name(l: Option<Label>) -> &'static str {
    match l {
        Some(Label::Noise) => "NOISE",
        Some(Label::Rsn) => "RSN",
        Some(Label::Soz) => "SOZ",
        None => "",
    }
}

fn features_extract(cfg: &RunConfig, manifest: &Path, out: &Path) -> CliResult {
    use rayon::prelude::*;
    let ds = load_dataset(manifest)?;
    let ics: Vec<_> = ds.ics().collect();
    let rows: Vec<FeatureVector> = ics
        .par_iter()
        .map(|ic| sozloc::features::extract_features(ic, ds.montage_layout, &cfg.features))
        .collect::<sozloc::Result<_>>()?;
    let mut csv = String::from("patient_id,ic_id,label");
    for f in Feature::ALL {
        write!(csv, ",{f}").unwrap();
    }
    csv.push('\n');
    for (ic, f) in ics.iter().zip(&rows) {
        write!(csv, "{},{},{}", ic.patient_id, ic.ic_id, label_name(ic.label)).unwrap();
        for v in f.to_array() {
            write!(csv, ",{v}").unwrap();
        }
        csv.push('\n');
    }
    write_atomic(out, csv.as_bytes())?;
    info!("wrote features of {} ICs to {}", rows.len(), out.display());
    Ok(())
}

fn train(cfg: &RunConfig, a: &TrainArgs, multiclass: bool) -> CliResult {
    let ds = load_dataset(&a.manifest)?;
    let tc = cfg.train_config();
    let (net, log): (NoiseNet, TrainingLog) = if multiclass {
        train_multiclass_baseline(&ds, &cfg.baseline, &tc)?
    } else {
        train_binary(&ds, &cfg.gate, &tc)?
    };
    for e in &log.epochs {
        info!(
            "epoch {:>3}  train loss {:.4}  val loss {:.4}  val acc {:.3}",
            e.epoch, e.train_loss, e.val_loss, e.val_accuracy
        );
    }
    info!("keeping epoch {} (val acc {:.3})", log.best_epoch, log.best().val_accuracy);
    net.save(&a.out)?;
    if let Some(p) = &a.log {
        write_json(p, &log)?;
    }
    Ok(())
}

fn fit(cfg: &RunConfig, a: &FitEkiArgs) -> CliResult {
    let ds = load_dataset(&a.manifest)?;
    let ics = analyze_dataset(&ds, &cfg.features)?;
    let samples: Vec<(FeatureVector, Label)> = ics.iter().map(|c| (c.features, c.label)).collect();
    let (model, summary) = fit_eki(&samples, &cfg.eki_config(), a.drop)?;
    info!("fitted on {summary:?}; omega {:?}", model.omega);
    model.save(&a.out)?;
    Ok(())
}

fn classify_cmd(cfg: &RunConfig, a: &ClassifyArgs) -> CliResult {
    use rayon::prelude::*;
    let ds = load_dataset(&a.manifest)?;
    let net = NoiseNet::load(&a.dl)?;
    if net.config.outputs != 1 {
        return Err(CliError::Usage(format!(
            "{} is a {}-class network; --dl needs the binary noise gate",
            a.dl.display(),
            net.config.outputs
        )));
    }
    let model = EkiModel::load(&a.eki)?;
    let ics: Vec<_> = ds.ics().collect();
    let inputs: Vec<Vec<f64>> = ics
        .par_iter()
        .map(|ic| prepare_input(ic, &net.config))
        .collect::<sozloc::Result<_>>()?;
    let refs: Vec<&[f64]> = inputs.iter().map(Vec::as_slice).collect();
    let gate = net.predict(&refs)?;
    let analyzed: Vec<(FeatureVector, Localization)> = ics
        .par_iter()
        .map(|ic| analyze_ic(ic, ds.montage_layout, &cfg.features))
        .collect::<sozloc::Result<_>>()?;
    let results: Vec<_> = ics
        .iter()
        .zip(gate)
        .zip(&analyzed)
        .map(|((ic, g), (f, loc))| {
            let dl = if g == 1 { BinaryLabel::Noise } else { BinaryLabel::NotNoise };
            classify(&ic.patient_id, &ic.ic_id, dl, f, *loc, &model)
        })
        .collect();
    let n_soz = results.iter().filter(|r| r.final_label == Label::Soz).count();
    ClassificationReport::new(cfg, results).save(&a.out)?;
    info!("{n_soz} SOZ calls written to {}", a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct LocalizedIc {
    patient_id: String,
    ic_id: String,
    localization: Localization,
}

#[derive(Serialize)]
struct LocalizationReport<'a> {
    format: &'static str,
    version: u32,
    config: &'a RunConfig,
    ics: Vec<LocalizedIc>,
}

fn localize(cfg: &RunConfig, a: &LocalizeArgs) -> CliResult {
    let ds = load_dataset(&a.manifest)?;
    let wanted: Option<std::collections::BTreeSet<(String, String)>> = match &a.report {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| sozloc::Error::Io {
                path: p.clone(),
                source: e,
            })?;
            let report: ClassificationReport<serde_json::Value> =
                serde_json::from_str(&text).map_err(|e| sozloc::Error::Load {
                    path: p.clone(),
                    reason: e.to_string(),
                })?;
            Some(
                report
                    .results
                    .into_iter()
                    .filter(|r| r.final_label == Label::Soz)
                    .map(|r| (r.patient_id, r.ic_id))
                    .collect(),
            )
        }
        None => None,
    };
    let mut out = Vec::new();
    for ic in ds.ics() {
        let key = (ic.patient_id.clone(), ic.ic_id.clone());
        if wanted.as_ref().is_some_and(|w| !w.contains(&key)) {
            continue;
        }
        let (_, localization) = analyze_ic(ic, ds.montage_layout, &cfg.features)?;
        out.push(LocalizedIc {
            patient_id: key.0,
            ic_id: key.1,
            localization,
        });
    }
    if let Some(w) = &wanted {
        if w.len() != out.len() {
            warn!("{} report entries are not in the manifest", w.len() - out.len());
        }
    }
    info!("localized {} ICs", out.len());
    write_json(
        &a.out,
        &LocalizationReport {
            format: "sozloc-localization",
            version: 1,
            config: cfg,
            ics: out,
        },
    )?;
    Ok(())
}

fn pct(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{:.1}%", 100.0 * v))
}

fn evaluate_cmd(cfg: &RunConfig, a: &EvaluateArgs) -> CliResult {
    let ds = load_dataset(&a.manifest)?;
    let opts = EvaluateOptions {
        gate: a.gate.into(),
        dropped: a.ablate,
        group: a.group.map(|g| match g {
            GroupArg::Age => GroupBy::Age,
            GroupArg::Sex => GroupBy::Sex,
        }),
        ablation: false,
        baseline: a.baseline,
    };
    let report = evaluate(&ds, cfg, &opts)?;
    for (name, m) in [("IC", &report.ic), ("patient", &report.patient)] {
        info!(
            "{name:<7} acc {}  precision {}  sensitivity {}  F1 {}",
            pct(m.accuracy),
            pct(m.precision),
            pct(m.sensitivity),
            pct(m.f1)
        );
    }
    if let Some(b) = &report.baseline {
        info!("baseline patient F1 {}  IC F1 {}", pct(b.patient.f1), pct(b.ic.f1));
    }
    write_json(&a.out, &report)?;
    Ok(())
}

#[derive(Serialize)]
struct AblationReport<'a> {
    format: &'static str,
    version: u32,
    config: &'a RunConfig,
    gate: GateSource,
    rows: Vec<AblationRow>,
}

fn ablate(cfg: &RunConfig, a: &AblateArgs) -> CliResult {
    let ds = load_dataset(&a.manifest)?;
    let opts = EvaluateOptions {
        gate: a.gate.into(),
        ablation: true,
        ..EvaluateOptions::default()
    };
    let report = evaluate(&ds, cfg, &opts)?;
    let rows = report.ablation.unwrap_or_default();
    for r in &rows {
        info!("{r}");
    }
    write_json(
        &a.out,
        &AblationReport {
            format: "sozloc-ablation",
            version: 1,
            config: cfg,
            gate: opts.gate,
            rows,
        },
    )?;
    Ok(())
}

fn read_samples(path: &Path) -> CliResult<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| sozloc::Error::Io {
        path: path.into(),
        source: e,
    })?;
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                CliError::Core(sozloc::Error::Load {
                    path: path.into(),
                    reason: format!("{t:?} is not a finite number"),
                })
            })
        })
        .collect()
}

#[derive(Serialize)]
struct StatsReport {
    test: &'static str,
    n: Vec<usize>,
    #[serde(flatten)]
    outcome: TestOutcome,
}

fn stats(a: &StatsArgs) -> CliResult {
    let (report, out) = match &a.test {
        StatsTest::Ks { input, out } => {
            let xs = read_samples(input)?;
            let outcome = ks_normality_test(&xs)?;
            (
                StatsReport {
                    test: "ks_normality",
                    n: vec![xs.len()],
                    outcome,
                },
                out,
            )
        }
        StatsTest::Welch { a, b, out } => {
            let xa = read_samples(a)?;
            let xb = read_samples(b)?;
            let outcome = welch_one_sided_t(&xa, &xb)?;
            (
                StatsReport {
                    test: "welch_one_sided",
                    n: vec![xa.len(), xb.len()],
                    outcome,
                },
                out,
            )
        }
    };
    match report.outcome {
        TestOutcome::Value { statistic, p_value } => info!("{}: statistic {statistic:.4}, p {p_value:.4e}", report.test),
        TestOutcome::Degenerate => warn!("{}: degenerate samples (zero variance)", report.test),
    }
    write_json(out, &report)?;
    Ok(())
}
