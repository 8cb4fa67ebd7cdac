//! usmae: synthetic tone-burst datasets, MAE pre-training, ToF fine-tuning
//! and evaluation from the command line.

use clap::{Args, Parser, Subcommand};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use usmae::checkpoint::{self, Checkpoint, Metadata};
use usmae::labeling::tof_label;
use usmae::metrics::EvalReport;
use usmae::model::ModelConfig;
use usmae::signal::{
    dequantize_8bit, excitation_template, generate_dataset, shannon_entropy, BurstParams,
    DatasetSpec, Envelope, SignalRecord,
};
use usmae::training::{self, Init, TrainConfig, TrainOutcome};
use usmae::us1d;

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NUMERIC: u8 = 4;
const EXIT_COMPAT: u8 = 5;

struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError { code: EXIT_USAGE, message: msg.into() }
    }
    fn io(msg: impl Into<String>) -> Self {
        CliError { code: EXIT_IO, message: msg.into() }
    }
    fn numeric(msg: impl Into<String>) -> Self {
        CliError { code: EXIT_NUMERIC, message: msg.into() }
    }
    fn compat(msg: impl Into<String>) -> Self {
        CliError { code: EXIT_COMPAT, message: msg.into() }
    }
}

impl From<usmae::us1d::Us1dError> for CliError {
    fn from(e: usmae::us1d::Us1dError) -> Self {
        CliError::io(e.to_string())
    }
}

impl From<usmae::checkpoint::CheckpointError> for CliError {
    fn from(e: usmae::checkpoint::CheckpointError) -> Self {
        CliError::io(e.to_string())
    }
}

impl From<usmae::signal::SignalError> for CliError {
    fn from(e: usmae::signal::SignalError) -> Self {
        CliError::usage(e.to_string())
    }
}

impl From<usmae::model::ModelError> for CliError {
    fn from(e: usmae::model::ModelError) -> Self {
        CliError::usage(e.to_string())
    }
}

impl From<usmae::training::TrainError> for CliError {
    fn from(e: usmae::training::TrainError) -> Self {
        use usmae::training::TrainError::*;
        match &e {
            NonFinite { .. } => CliError::numeric(e.to_string()),
            LengthMismatch { .. } => CliError::compat(e.to_string()),
            BadConfig(m) if m.contains("checkpoint") => CliError::compat(e.to_string()),
            _ => CliError::usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::io(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "usmae",
    about = "Masked-autoencoder pre-training and time-of-flight classification for 1D ultrasound signals",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// UTF-8 key=value file supplying defaults for any flag of this command
    #[arg(long, global = false)]
    config: Option<PathBuf>,
    /// Worker threads (also honors USMAE_THREADS; 0 = all cores)
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args, Debug)]
struct GenArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1.0e6)]
    freq_min: f64,
    #[arg(long, default_value_t = 4.0e6)]
    freq_max: f64,
    #[arg(long, default_value_t = 0.2)]
    amp_min: f64,
    #[arg(long, default_value_t = 1.0)]
    amp_max: f64,
    #[arg(long, default_value_t = 200)]
    burst_min: usize,
    #[arg(long, default_value_t = 400)]
    burst_max: usize,
    #[arg(long, default_value_t = 18.0)]
    snr_min: f64,
    #[arg(long, default_value_t = 38.0)]
    snr_max: f64,
    /// hann | rect
    #[arg(long, default_value = "hann")]
    envelope: String,
    /// Disable additive noise entirely
    #[arg(long, default_value_t = false)]
    no_noise: bool,
    /// Omit labels from the output file
    #[arg(long, default_value_t = false)]
    unlabeled: bool,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    /// Separate validation file; default holds out 10% of --data
    #[arg(long)]
    val: Option<PathBuf>,
    /// Preset: T, S, M, L, M-dh32, M-dh64, M-dh128, M-dh64-h3, M-dh64-h5
    #[arg(long, default_value = "M")]
    model: String,
    #[arg(long, default_value_t = 32)]
    patch_size: usize,
    #[arg(long, default_value_t = 0.75)]
    mask_ratio: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 1024)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.15)]
    warmup: f64,
    #[arg(long)]
    out: PathBuf,
    /// CSV loss log path (default: <out>.log.csv)
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FinetuneArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    val: Option<PathBuf>,
    /// Checkpoint path, or the literal "random" for the scratch arm
    #[arg(long)]
    init: String,
    /// Model preset; ignored when --init is a checkpoint (its config wins)
    #[arg(long, default_value = "M")]
    model: String,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 1024)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 0.10)]
    warmup: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Optional CSV report path
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EntropyArgs {
    #[command(flatten)]
    common: Common,
    /// One or more US1D files pooled into a single histogram
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct LabelArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    /// US1D file whose first record is the reference excitation; when
    /// omitted the template is synthesized from --freq/--burst/--envelope
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long, default_value_t = 2.5e6)]
    freq: f64,
    #[arg(long, default_value_t = 300)]
    burst: usize,
    #[arg(long, default_value = "hann")]
    envelope: String,
    /// Relabeled copy of the input; omit to only print agreement
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Override the checkpoint's mask ratio
    #[arg(long)]
    mask_ratio: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic tone-burst dataset (US1D)
    GenData(GenArgs),
    /// Self-supervised masked-autoencoder pre-training
    Pretrain(PretrainArgs),
    /// Supervised fine-tuning or from-scratch training of the classifier
    Finetune(FinetuneArgs),
    /// Evaluate a checkpoint on a labeled dataset
    Eval(EvalArgs),
    /// Shannon entropy (bits) of the pooled 8-bit amplitude histogram
    Entropy(EntropyArgs),
    /// Cross-correlation labeling against a reference excitation
    Label(LabelArgs),
    /// Dump original/masked/reconstructed triples as CSV
    Reconstruct(ReconstructArgs),
}

/// Expand `--config file` into argv entries for keys the user did not pass
/// explicitly; explicit flags always win.
fn inject_config(mut argv: Vec<String>) -> Result<Vec<String>, CliError> {
    let Some(pos) = argv.iter().position(|a| a == "--config") else {
        return Ok(argv);
    };
    let path = argv
        .get(pos + 1)
        .cloned()
        .ok_or_else(|| CliError::usage("--config needs a file path"))?;
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::io(format!("cannot read config {path}: {e}")))?;
    let mut extra = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::usage(format!("{path}:{}: expected key=value", lineno + 1))
        })?;
        let flag = format!("--{}", key.trim());
        if argv.contains(&flag) {
            continue;
        }
        extra.push(flag);
        let value = value.trim();
        if !value.is_empty() {
            extra.push(value.to_string());
        }
    }
    // insert right after the subcommand so positional structure is kept
    argv.splice(pos..pos, extra);
    Ok(argv)
}

fn setup_threads(flag: usize) {
    let n = if flag > 0 {
        flag
    } else {
        std::env::var("USMAE_THREADS").ok().and_then(|v| v.parse().ok()).unwrap_or(0)
    };
    if n > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn read_records(path: &Path) -> Result<(us1d::Us1dHeader, Vec<SignalRecord>), CliError> {
    Ok(us1d::read_file(path)?)
}

fn parse_envelope(s: &str) -> Result<Envelope, CliError> {
    s.parse::<Envelope>().map_err(|e| CliError::usage(e))
}

fn cmd_gen_data(a: GenArgs) -> Result<(), CliError> {
    let spec = DatasetSpec {
        count: a.count,
        seed: a.seed,
        freq_min_hz: a.freq_min,
        freq_max_hz: a.freq_max,
        amp_min: a.amp_min,
        amp_max: a.amp_max,
        burst_min: a.burst_min,
        burst_max: a.burst_max,
        snr_min_db: a.snr_min,
        snr_max_db: a.snr_max,
        envelope: parse_envelope(&a.envelope)?,
        no_noise: a.no_noise,
        ..DatasetSpec::default()
    };
    let records = generate_dataset(&spec)?;
    us1d::write_file(&a.out, &records, spec.sample_rate_hz as u32, !a.unlabeled)?;

    let entropy = shannon_entropy(records.iter().map(|r| r.samples.as_slice()))?;
    let mut hist = [0u32; 200];
    for r in &records {
        hist[r.label as usize] += 1;
    }
    let (min_c, max_c) = (hist.iter().min().unwrap(), hist.iter().max().unwrap());
    println!("wrote {} records to {}", records.len(), a.out.display());
    println!("entropy_bits: {entropy:.4}");
    println!("label_histogram: min {min_c}, max {max_c} per class");
    Ok(())
}

fn load_split(
    data: &Path,
    val: Option<&Path>,
    tcfg: &mut TrainConfig,
) -> Result<Vec<SignalRecord>, CliError> {
    let (_, mut records) = read_records(data)?;
    if let Some(v) = val {
        let (_, vrecs) = read_records(v)?;
        if vrecs[0].samples.len() != records[0].samples.len() {
            return Err(CliError::compat("train/val signal lengths differ"));
        }
        tcfg.val_count = Some(vrecs.len());
        records.extend(vrecs);
    }
    Ok(records)
}

fn save_outcome(
    out: &Path,
    log: Option<&Path>,
    outcome: &TrainOutcome,
    mcfg: &ModelConfig,
    seed: u64,
) -> Result<(), CliError> {
    let mut metrics = BTreeMap::new();
    for row in outcome.log.iter().rev().take(8) {
        metrics.entry(format!("{}_{}", row.split, row.metric)).or_insert(row.value);
    }
    let epochs = outcome.log.iter().map(|r| r.epoch).max().unwrap_or(0) + 1;
    let meta = Metadata {
        model: mcfg.clone(),
        seed,
        epoch: epochs - 1,
        optim_step: outcome.optim.step,
        metrics: metrics.clone(),
    };
    checkpoint::save(
        out,
        &Checkpoint {
            meta: meta.clone(),
            params: outcome.final_params.clone(),
            optim: Some(outcome.optim.clone()),
        },
    )?;
    let best_path = out.with_extension("best.umae");
    checkpoint::save(
        &best_path,
        &Checkpoint {
            meta: Metadata { epoch: outcome.best_epoch, ..meta },
            params: outcome.best_params.clone(),
            optim: None,
        },
    )?;
    let log_path = log
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.with_extension("log.csv"));
    us1d::write_atomic(&log_path, training::log_csv(&outcome.log).as_bytes())?;
    println!("final checkpoint: {}", out.display());
    println!("best checkpoint:  {} (epoch {})", best_path.display(), outcome.best_epoch);
    println!("log: {}", log_path.display());
    Ok(())
}

fn cmd_pretrain(a: PretrainArgs) -> Result<(), CliError> {
    let mcfg = ModelConfig {
        patch_size: a.patch_size,
        mask_ratio: a.mask_ratio,
        ..ModelConfig::preset(&a.model)?
    };
    mcfg.validate()?;
    let mut tcfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        seed: a.seed,
        base_lr: a.lr,
        warmup_fraction: a.warmup,
        ..TrainConfig::pretrain_defaults()
    };
    let records = load_split(&a.data, a.val.as_deref(), &mut tcfg)?;
    let outcome = training::pretrain(&records, &mcfg, &tcfg, None)?;
    for row in outcome.log.iter().filter(|r| r.metric == "recon_mae") {
        println!("epoch {:>4} {:>5} recon_mae {:.6}", row.epoch, row.split, row.value);
    }
    save_outcome(&a.out, a.log.as_deref(), &outcome, &mcfg, a.seed)
}

fn cmd_finetune(a: FinetuneArgs) -> Result<(), CliError> {
    let (init, mcfg) = if a.init == "random" {
        (Init::Random, ModelConfig::preset(&a.model)?)
    } else {
        let ckpt = checkpoint::load(Path::new(&a.init))?;
        (Init::Encoder(ckpt.params), ckpt.meta.model)
    };
    let mut tcfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        seed: a.seed,
        base_lr: a.lr,
        warmup_fraction: a.warmup,
        topk: a.k,
        ..TrainConfig::finetune_defaults()
    };
    let (header, _) = read_records(&a.data)?;
    if !header.labeled {
        return Err(CliError::usage("fine-tuning needs a labeled dataset"));
    }
    let records = load_split(&a.data, a.val.as_deref(), &mut tcfg)?;
    let outcome = training::finetune(&records, &mcfg, &tcfg, init)?;
    for row in &outcome.log {
        println!(
            "epoch {:>4} {:>5} {} {:.6}",
            row.epoch, row.split, row.metric, row.value
        );
    }
    save_outcome(&a.out, a.log.as_deref(), &outcome, &mcfg, a.seed)?;

    // final report on the validation slice
    let n_val = tcfg.val_count.unwrap_or((records.len() as f64 * tcfg.val_fraction) as usize);
    if n_val > 0 {
        let val = &records[records.len() - n_val..];
        let logits = training::eval_logits(&outcome.final_params, &mcfg, val)?;
        let labels: Vec<u16> = val.iter().map(|r| r.label).collect();
        let report = EvalReport::from_logits(&logits, &labels, a.k, header.sample_rate_hz as f64)
            .map_err(|e| CliError::numeric(e.to_string()))?;
        print!("{}", report.table());
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let ckpt = checkpoint::load(&a.ckpt)?;
    let (header, records) = read_records(&a.data)?;
    if !header.labeled {
        return Err(CliError::usage("evaluation needs a labeled dataset"));
    }
    if header.signal_length as usize != ckpt.meta.model.signal_length {
        return Err(CliError::compat(format!(
            "dataset signal length {} does not match checkpoint ({})",
            header.signal_length, ckpt.meta.model.signal_length
        )));
    }
    let logits = training::eval_logits(&ckpt.params, &ckpt.meta.model, &records)?;
    let labels: Vec<u16> = records.iter().map(|r| r.label).collect();
    let report = EvalReport::from_logits(&logits, &labels, a.k, header.sample_rate_hz as f64)
        .map_err(|e| CliError::numeric(e.to_string()))?;
    print!("{}", report.table());
    if let Some(csv) = &a.csv {
        us1d::write_atomic(csv, report.csv().as_bytes())?;
    }
    Ok(())
}

fn cmd_entropy(a: EntropyArgs) -> Result<(), CliError> {
    let mut all: Vec<Vec<u8>> = Vec::new();
    for path in &a.data {
        let (_, records) = read_records(path)?;
        all.extend(records.into_iter().map(|r| r.samples));
    }
    let entropy = shannon_entropy(all.iter().map(|s| s.as_slice()))?;
    println!("entropy_bits: {entropy:.4}");
    Ok(())
}

fn cmd_label(a: LabelArgs) -> Result<(), CliError> {
    let (header, mut records) = read_records(&a.data)?;
    let template: Vec<f64> = match &a.template {
        Some(path) => {
            let (th, trecs) = read_records(path)?;
            if th.signal_length != header.signal_length {
                return Err(CliError::compat("template signal length differs from data"));
            }
            dequantize_8bit(&trecs[0].samples)
        }
        None => {
            let params = BurstParams {
                frequency_hz: a.freq,
                amplitude: 1.0,
                burst_length: a.burst,
                onset: 0,
                peak_snr_db: usmae::signal::NO_NOISE_SNR_DB,
                envelope: parse_envelope(&a.envelope)?,
            };
            let spec = DatasetSpec {
                signal_length: header.signal_length as usize,
                sample_rate_hz: header.sample_rate_hz as f64,
                ..DatasetSpec::default()
            };
            excitation_template(&params, &spec)?
        }
    };

    let mut agree = 0usize;
    for r in &mut records {
        let signal = dequantize_8bit(&r.samples);
        let label = tof_label(&signal, &template).map_err(|e| CliError::numeric(e.to_string()))?;
        if header.labeled && label == r.label {
            agree += 1;
        }
        r.label = label;
    }
    if header.labeled {
        println!(
            "agreement with stored labels: {}/{} ({:.2}%)",
            agree,
            records.len(),
            100.0 * agree as f64 / records.len() as f64
        );
    }
    if let Some(out) = &a.out {
        us1d::write_file(out, &records, header.sample_rate_hz, true)?;
        println!("wrote {} relabeled records to {}", records.len(), out.display());
    }
    Ok(())
}

fn cmd_reconstruct(a: ReconstructArgs) -> Result<(), CliError> {
    let ckpt = checkpoint::load(&a.ckpt)?;
    let mut mcfg = ckpt.meta.model.clone();
    if let Some(r) = a.mask_ratio {
        mcfg.mask_ratio = r;
    }
    let (header, records) = read_records(&a.data)?;
    if header.signal_length as usize != mcfg.signal_length {
        return Err(CliError::compat(format!(
            "dataset signal length {} does not match checkpoint ({})",
            header.signal_length, mcfg.signal_length
        )));
    }
    let mut csv = String::from("record,sample,original,visible,reconstruction\n");
    for (i, r) in records.iter().enumerate() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed);
        rng.set_stream(i as u64);
        let (orig, visible, recon) =
            training::reconstruct_one(&ckpt.params, &mcfg, &r.samples, &mut rng)?;
        for s in 0..orig.len() {
            csv.push_str(&format!(
                "{i},{s},{},{},{}\n",
                orig[s],
                visible[s] as u8,
                recon[s]
            ));
        }
    }
    us1d::write_atomic(&a.out, csv.as_bytes())?;
    println!(
        "wrote {} rows to {}",
        records.len() * header.signal_length as usize,
        a.out.display()
    );
    Ok(())
}

fn run() -> Result<(), CliError> {
    let argv = inject_config(std::env::args().collect())?;
    let cli = Cli::parse_from(argv);
    match cli.command {
        Command::GenData(a) => {
            setup_threads(a.common.threads);
            cmd_gen_data(a)
        }
        Command::Pretrain(a) => {
            setup_threads(a.common.threads);
            cmd_pretrain(a)
        }
        Command::Finetune(a) => {
            setup_threads(a.common.threads);
            cmd_finetune(a)
        }
        Command::Eval(a) => {
            setup_threads(a.common.threads);
            cmd_eval(a)
        }
        Command::Entropy(a) => {
            setup_threads(a.common.threads);
            cmd_entropy(a)
        }
        Command::Label(a) => {
            setup_threads(a.common.threads);
            cmd_label(a)
        }
        Command::Reconstruct(a) => {
            setup_threads(a.common.threads);
            cmd_reconstruct(a)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
