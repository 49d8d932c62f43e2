use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use speechkit::audio_io::{read_wav, write_wav, AudioClip};
use speechkit::bench::{self, ComparisonReport, MonotonicClock};
use speechkit::config::RunConfig;
use speechkit::dataset::{self, load_pairs, SnrLadder, DEFAULT_SEGMENT_SECONDS};
use speechkit::metrics::{medians_path, EvalReport};
use speechkit::net::{checkpoint, Model};
use speechkit::quant::{quantize_model, AnyModel};
use speechkit::train;
use speechkit::{Error, Exec};

#[derive(Parser)]
#[command(name = "speechkit", version, about = "Speech enhancement corpus, training, quantization and evaluation")]
struct Cli {
    /// Run data-parallel stages on the calling thread only.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a noisy/clean corpus and its manifest from clean and noise WAV folders.
    Synth(SynthArgs),
    /// Train a model on a rendered corpus.
    Train(TrainArgs),
    /// Enhance one WAV file.
    Enhance(EnhanceArgs),
    /// Score a model on a rendered corpus (STOI, SI-SNR).
    Eval(EvalArgs),
    /// Quantize an FP32 checkpoint to INT8 weights.
    Quantize(QuantizeArgs),
    /// Compare FP32 and INT8 checkpoints for latency, footprint and STOI.
    Bench(BenchArgs),
    /// Render Markdown/CSV tables from bench and eval outputs.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    clean: PathBuf,
    #[arg(long)]
    noise: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    snr_min: f64,
    #[arg(long, allow_negative_numbers = true)]
    snr_max: f64,
    #[arg(long)]
    levels: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_SEGMENT_SECONDS)]
    segment_seconds: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// JSON with optional `model`, `loss` and `optim` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Start from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to score; omit together with --unprocessed to score the noisy input.
    #[arg(long, required_unless_present = "unprocessed")]
    model: Option<PathBuf>,
    #[arg(long, conflicts_with = "model")]
    unprocessed: bool,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    fp32: PathBuf,
    #[arg(long)]
    int8: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = bench::DEFAULT_BATCH)]
    batch: usize,
    #[arg(long, default_value_t = bench::DEFAULT_WARMUP)]
    warmup: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    bench: PathBuf,
    /// Evaluation CSVs as `LABEL=PATH` (or `PATH`, labelled by file stem), in column order.
    #[arg(long, num_args = 1..)]
    eval: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    let result = match cli.command {
        Command::Synth(a) => synth(a, exec),
        Command::Train(a) => train_cmd(a, exec),
        Command::Enhance(a) => enhance(a),
        Command::Eval(a) => eval(a, exec),
        Command::Quantize(a) => quantize(a),
        Command::Bench(a) => bench_cmd(a, exec),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

type Result<T> = std::result::Result<T, Error>;

fn synth(a: SynthArgs, exec: Exec) -> Result<()> {
    let ladder = SnrLadder::new(a.snr_min, a.snr_max, a.levels);
    let (manifest, corpus) = dataset::build_manifest(&a.clean, &a.noise, &ladder, a.seed, a.segment_seconds)?;
    dataset::render_corpus(&manifest, &corpus, &a.out, exec)?;
    println!(
        "wrote {} entries ({} segments, {} noise sources) to {}",
        manifest.entries.len(),
        corpus.segments.len(),
        corpus.noises.len(),
        a.out.join(dataset::MANIFEST_FILE).display()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs, exec: Exec) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = a.epochs {
        cfg.optim.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.optim.learning_rate = v;
    }
    if let Some(v) = a.batch {
        cfg.optim.batch_size = v;
    }
    if let Some(v) = a.seed {
        cfg.optim.seed = v;
    }
    cfg.validate()?;
    let (_, pairs) = load_pairs(&a.manifest, exec)?;
    let mut model = match &a.init {
        Some(p) => {
            let m = checkpoint::load_model(p)?;
            if *m.config() != cfg.model {
                return Err(Error::ArchitectureMismatch);
            }
            m
        }
        None => Model::init(cfg.model.clone(), cfg.optim.seed)?,
    };
    let mut stats = train::fit(&mut model, &pairs, &cfg.loss, &cfg.optim, exec, |e| {
        println!("epoch {:>3}  loss {:.6}  {:.1}s", e.epoch, e.mean_loss, e.seconds);
    })?;
    checkpoint::save_model(&a.out, &model)?;
    stats.checkpoint = Some(a.out.clone());
    let log = log_path(&a.out);
    std::fs::write(&log, stats.to_csv())?;
    println!("saved {} ({} parameters); log {}", a.out.display(), model.param_count(), log.display());
    Ok(())
}

fn log_path(ckpt: &Path) -> PathBuf {
    let mut name = ckpt.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".train.csv");
    ckpt.with_file_name(name)
}

fn enhance(a: EnhanceArgs) -> Result<()> {
    let model = AnyModel::load(&a.model)?;
    let clip = read_wav(&a.input)?;
    let out = model.enhance(&clip.samples)?;
    write_wav(&a.out, &AudioClip::new(out, clip.sample_rate_hz))
}

fn eval(a: EvalArgs, exec: Exec) -> Result<()> {
    let (_, pairs) = load_pairs(&a.manifest, exec)?;
    let report = match &a.model {
        Some(p) => bench::evaluate(&AnyModel::load(p)?, &pairs, exec)?,
        None => bench::evaluate_noisy(&pairs, exec)?,
    };
    report.save(&a.out)?;
    if let Some(m) = &report.overall {
        println!(
            "{} clips: median STOI {:.4}, median SI-SNR {:.2} dB",
            m.count, m.stoi, m.si_snr_db
        );
    }
    println!("wrote {} and {}", a.out.display(), medians_path(&a.out).display());
    Ok(())
}

fn quantize(a: QuantizeArgs) -> Result<()> {
    let model = checkpoint::load_model(&a.model)?;
    let q = quantize_model(&model)?;
    q.save(&a.out)?;
    let (f, i) = (speechkit::quant::model_footprint(&model), q.footprint());
    println!(
        "parameter bytes {} -> {} ({:.2}% reduction); conv layers {} -> {}",
        f.total_bytes,
        i.total_bytes,
        (f.total_bytes as f64 - i.total_bytes as f64) / f.total_bytes as f64 * 100.0,
        f.conv_bytes,
        i.conv_bytes
    );
    Ok(())
}

/// Peak resident set size from `/proc/self/status`, where available.
fn peak_rss_kb() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

fn bench_cmd(a: BenchArgs, exec: Exec) -> Result<()> {
    let fp32 = AnyModel::load(&a.fp32)?;
    let int8 = AnyModel::load(&a.int8)?;
    let (_, pairs) = load_pairs(&a.manifest, exec)?;
    let noisy: Vec<AudioClip> = pairs
        .iter()
        .map(|p| AudioClip::new(p.noisy.clone(), p.sample_rate_hz))
        .collect();
    let clean: Vec<AudioClip> = pairs
        .iter()
        .map(|p| AudioClip::new(p.clean.clone(), p.sample_rate_hz))
        .collect();
    let clock = MonotonicClock::default();
    let cmp = bench::compare_models(&fp32, &int8, &noisy, &clean, a.batch, a.warmup, &clock)?;
    if !cmp.is_consistent() {
        return Err(Error::Invariant("comparison report is not self-consistent".into()));
    }
    cmp.save(&a.out)?;
    bench::emit_report(&cmp, &[], &a.out)?;
    println!(
        "fp32 {:.2} ms/clip, int8 {:.2} ms/clip, speedup {:.2}x; params {} -> {} bytes ({:.2}% reduction)",
        cmp.fp32.mean_ms_per_clip,
        cmp.int8.mean_ms_per_clip,
        cmp.speedup,
        cmp.fp32_bytes,
        cmp.int8_bytes,
        cmp.reduction_percent
    );
    if let Some(kb) = peak_rss_kb() {
        println!("peak resident memory of this process (informational): {kb} kB");
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let cmp = ComparisonReport::load(&a.bench)?;
    let mut evals = Vec::with_capacity(a.eval.len());
    for spec in &a.eval {
        let (label, path) = match spec.split_once('=') {
            Some((l, p)) => (l.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(spec);
                let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or(spec).to_string();
                (stem, p)
            }
        };
        evals.push((label, EvalReport::load(&path)?));
    }
    bench::emit_report(&cmp, &evals, &a.out)?;
    println!("wrote {}", a.out.join("report.md").display());
    Ok(())
}
