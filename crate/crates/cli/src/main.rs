//! Command-line surface: spectrogram extraction, alignment search, duration
//! predictor training and sampling, loss evaluation from tensor files, and
//! the oracle/property verification suites.
//!
//! Exit codes: 0 success, 1 runtime or numeric failure, 2 usage or contract
//! violation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use ttsflow::config::Config;
use ttsflow::dsp;
use ttsflow::losses::{self, Reduction};
use ttsflow::sdp::train as sdp_train;
use ttsflow::sdp::StochasticDurationPredictor as Sdp;
use ttsflow::verify;
use ttsflow::{align, DiagGaussian, Error, FlowStack, LikelihoodMatrix, Result, Spectrogram, Tensor};

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::NoValidPath { .. }
                | Error::Invalid(_)
                | Error::ShapeMismatch { .. }
                | Error::Parse { .. }
                | Error::NonScalarLoss(_)
                | Error::MissingGrad(_) => 2,
                Error::NonFinite { .. } | Error::Io(_) => 1,
            }
        }
    };
    std::process::exit(code);
}

#[derive(Parser)]
#[command(name = "ttsflow", version, about = "Flow-based TTS numerical core")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FileFormat {
    Csv,
    Binary,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a linear or log-mel spectrogram from a 16-bit PCM mono WAV.
    Spec(SpecArgs),
    /// Monotonic alignment search over a log-likelihood matrix CSV.
    Align(AlignArgs),
    /// Train the stochastic duration predictor on a JSONL dataset.
    TrainSdp(TrainArgs),
    /// Sample utterance durations from a trained checkpoint.
    SampleDurations(SampleArgs),
    /// Evaluate one of the training losses on tensor files.
    LossEval(LossEvalArgs),
    /// Run the oracle and property suites.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SpecArgs {
    /// Input WAV path (RIFF, PCM16, mono).
    #[arg(long)]
    input: PathBuf,
    /// Emit the 80-band log-mel spectrogram.
    #[arg(long, conflicts_with = "linear")]
    mel: bool,
    /// Emit the linear magnitude spectrogram.
    #[arg(long)]
    linear: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: FileFormat,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct AlignArgs {
    /// Log-likelihood matrix CSV, one row per token.
    #[arg(long)]
    matrix: PathBuf,
    /// Output CSV for the 0/1 alignment path.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSON output for per-token durations.
    #[arg(long)]
    durations: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// JSONL rows: {"durations": [...], "condition": [[...]]}.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: usize,
    /// Checkpoint prefix; writes <out>.json and <out>.bin.
    #[arg(long)]
    out: PathBuf,
    /// Metrics CSV path (default: metrics.csv next to the checkpoint).
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct SampleArgs {
    /// Checkpoint prefix written by train-sdp.
    #[arg(long)]
    ckpt: PathBuf,
    /// Number of sampled utterances.
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0.8)]
    noise_scale: f64,
    /// Output CSV: per-sample total durations then a binned histogram.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossKind {
    Recon,
    Kl,
    AdvD,
    AdvG,
    Fm,
    Total,
}

#[derive(Args)]
struct LossEvalArgs {
    #[arg(long, value_enum)]
    loss: LossKind,
    /// Target spectrogram/tensor file (recon).
    #[arg(long)]
    target: Option<PathBuf>,
    /// Predicted spectrogram/tensor file (recon).
    #[arg(long)]
    prediction: Option<PathBuf>,
    /// Use sum reduction instead of mean (recon).
    #[arg(long)]
    sum: bool,
    /// Real discriminator outputs (adv-d) or comma-separated real feature
    /// maps (fm).
    #[arg(long)]
    real: Option<String>,
    /// Fake discriminator outputs (adv-d, adv-g) or comma-separated fake
    /// feature maps (fm).
    #[arg(long)]
    fake: Option<String>,
    /// Latent sample file (kl).
    #[arg(long)]
    z: Option<PathBuf>,
    #[arg(long)]
    posterior_mu: Option<PathBuf>,
    #[arg(long)]
    posterior_sigma: Option<PathBuf>,
    #[arg(long)]
    prior_mu: Option<PathBuf>,
    #[arg(long)]
    prior_sigma: Option<PathBuf>,
    /// Serialized prior flow (kl): JSON manifest path.
    #[arg(long)]
    flow_manifest: Option<PathBuf>,
    /// Serialized prior flow (kl): flat f64 value file.
    #[arg(long)]
    flow_values: Option<PathBuf>,
    /// Five comma-separated loss components (total).
    #[arg(long)]
    values: Option<String>,
    /// Five comma-separated weights (total; defaults to ones).
    #[arg(long)]
    weights: Option<String>,
}

#[derive(Args)]
struct VerifyArgs {
    /// all | mas | flows | losses | grad | dsp | sdp
    #[arg(long, default_value = "all")]
    suite: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Spec(args) => cmd_spec(args).map(|()| 0),
        Command::Align(args) => cmd_align(args).map(|()| 0),
        Command::TrainSdp(args) => cmd_train_sdp(args).map(|()| 0),
        Command::SampleDurations(args) => cmd_sample_durations(args).map(|()| 0),
        Command::LossEval(args) => cmd_loss_eval(args).map(|()| 0),
        Command::Verify(args) => cmd_verify(args),
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn cmd_spec(args: SpecArgs) -> Result<()> {
    if args.mel == args.linear {
        return Err(Error::invalid("spec: pass exactly one of --mel or --linear"));
    }
    let cfg = load_config(&args.config)?;
    let waveform = dsp::load_wav::<f64>(&args.input)?;
    let spectrogram = if args.mel {
        dsp::mel_spectrogram(&waveform, &cfg.stft, &cfg.mel)?
    } else {
        dsp::stft_magnitude(&waveform, &cfg.stft)?
    };
    let mut out = fs::File::create(&args.out)?;
    match args.format {
        FileFormat::Csv => spectrogram.write_csv(&mut out)?,
        FileFormat::Binary => spectrogram.write_binary(&mut out)?,
    }
    Ok(())
}

fn cmd_align(args: AlignArgs) -> Result<()> {
    let mut file = fs::File::open(&args.matrix)?;
    let (values, t_x, t_y) = dsp::read_matrix_csv::<f64>(&mut file)?;
    let matrix = LikelihoodMatrix::new(values, t_x, t_y)?;
    let path = align::mas(&matrix)?;

    let dense = path.to_matrix();
    let mut out = fs::File::create(&args.out)?;
    for row in dense.chunks(t_y) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(","))?;
    }

    if let Some(dur_path) = &args.durations {
        let durations = align::durations_from_path(&path)?;
        let json = serde_json::json!({ "durations": durations });
        fs::write(dur_path, serde_json::to_string_pretty(&json).expect("serializable"))?;
    }
    Ok(())
}

fn cmd_train_sdp(args: TrainArgs) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    let data = sdp_train::load_jsonl(&args.data)?;
    let cond_dim = data[0].cond_dim();
    if data.iter().any(|e| e.cond_dim() != cond_dim) {
        return Err(Error::invalid("train-sdp: all rows must share one condition width"));
    }
    cfg.sdp.cond_dim = cond_dim;

    let seed = args.seed.unwrap_or(cfg.seed);
    let mut rng = ttsflow::rng::seeded(seed);
    let model = Sdp::new(cfg.sdp, &mut rng)?;
    let opts = sdp_train::TrainOptions {
        steps: args.steps,
        batch_size: args.batch_size.unwrap_or(cfg.batch_size),
        seed: seed.wrapping_add(1),
        optim: cfg.optim,
    };
    let (metrics, opt) = sdp_train::train(&model, &data, &opts)?;

    let sample_condition = data[0].condition_tensor::<f64>()?;
    sdp_train::save_checkpoint(&args.out, &model, Some(&opt), Some(&sample_condition))?;

    let metrics_path = args.metrics.clone().unwrap_or_else(|| {
        args.out
            .parent()
            .map(|p| p.join("metrics.csv"))
            .unwrap_or_else(|| PathBuf::from("metrics.csv"))
    });
    let mut mf = fs::File::create(&metrics_path)?;
    writeln!(mf, "step,L_dur")?;
    for (step, loss) in &metrics {
        writeln!(mf, "{step},{loss}")?;
    }
    println!(
        "trained {} steps on {} examples; checkpoint {}, metrics {}",
        args.steps,
        data.len(),
        args.out.display(),
        metrics_path.display()
    );
    Ok(())
}

fn cmd_sample_durations(args: SampleArgs) -> Result<()> {
    let ckpt = sdp_train::load_checkpoint::<f64>(&args.ckpt)?;
    let cond = ckpt.sample_condition.ok_or_else(|| {
        Error::invalid("sample-durations: checkpoint carries no sample condition")
    })?;
    let mut rng = ttsflow::rng::seeded(args.seed);
    let mut totals = Vec::with_capacity(args.n);
    for _ in 0..args.n {
        let durations = ckpt.model.sample_durations(&cond, args.noise_scale, &mut rng)?;
        totals.push(durations.iter().sum::<usize>());
    }

    let mut out = fs::File::create(&args.out)?;
    writeln!(out, "sample,total_duration")?;
    for (i, total) in totals.iter().enumerate() {
        writeln!(out, "{i},{total}")?;
    }
    writeln!(out)?;
    writeln!(out, "bin,count")?;
    let lo = *totals.iter().min().expect("n >= 1");
    let hi = *totals.iter().max().expect("n >= 1");
    for bin in lo..=hi {
        let count = totals.iter().filter(|t| **t == bin).count();
        writeln!(out, "{bin},{count}")?;
    }
    Ok(())
}

fn read_tensor(path: &Path) -> Result<Tensor> {
    let spectrogram = Spectrogram::read_binary(&mut fs::File::open(path)?)?;
    Tensor::new(spectrogram.values, &[spectrogram.frames, spectrogram.bins])
}

fn read_tensor_arg(arg: &Option<PathBuf>, name: &str) -> Result<Tensor> {
    let path = arg
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("loss-eval: missing --{name}")))?;
    read_tensor(path)
}

fn read_tensor_list(arg: &Option<String>, name: &str) -> Result<Vec<Tensor>> {
    let list = arg
        .as_ref()
        .ok_or_else(|| Error::invalid(format!("loss-eval: missing --{name}")))?;
    list.split(',')
        .map(|p| read_tensor(Path::new(p.trim())))
        .collect()
}

fn parse_five(arg: &str, name: &str) -> Result<[f64; 5]> {
    let parts: Vec<f64> = arg
        .split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::invalid(format!("loss-eval: bad number in --{name}")))
        })
        .collect::<Result<_>>()?;
    parts
        .try_into()
        .map_err(|_| Error::invalid(format!("loss-eval: --{name} needs exactly 5 values")))
}

fn cmd_loss_eval(args: LossEvalArgs) -> Result<()> {
    let value = match args.loss {
        LossKind::Recon => {
            let target = read_tensor_arg(&args.target, "target")?;
            let prediction = read_tensor_arg(&args.prediction, "prediction")?;
            let reduction = if args.sum { Reduction::Sum } else { Reduction::Mean };
            losses::recon_loss(&target, &prediction, reduction)?.item()
        }
        LossKind::AdvD => {
            let real_path = args.real.as_deref().map(PathBuf::from);
            let fake_path = args.fake.as_deref().map(PathBuf::from);
            let real = read_tensor_arg(&real_path, "real")?;
            let fake = read_tensor_arg(&fake_path, "fake")?;
            losses::adv_loss_d(&real, &fake)?.item()
        }
        LossKind::AdvG => {
            let fake_path = args.fake.as_deref().map(PathBuf::from);
            let fake = read_tensor_arg(&fake_path, "fake")?;
            losses::adv_loss_g(&fake)?.item()
        }
        LossKind::Fm => {
            let real = read_tensor_list(&args.real, "real")?;
            let fake = read_tensor_list(&args.fake, "fake")?;
            losses::fm_loss(&real, &fake)?.item()
        }
        LossKind::Kl => {
            let z = read_tensor_arg(&args.z, "z")?;
            let posterior = DiagGaussian::new(
                read_tensor_arg(&args.posterior_mu, "posterior-mu")?,
                read_tensor_arg(&args.posterior_sigma, "posterior-sigma")?,
            )?;
            let prior = DiagGaussian::new(
                read_tensor_arg(&args.prior_mu, "prior-mu")?,
                read_tensor_arg(&args.prior_sigma, "prior-sigma")?,
            )?;
            let flow = match (&args.flow_manifest, &args.flow_values) {
                (Some(manifest), Some(values)) => {
                    ttsflow::flows::serialize::load_stack::<f64>(manifest, values)?
                }
                (None, None) => FlowStack::identity(),
                _ => {
                    return Err(Error::invalid(
                        "loss-eval: --flow-manifest and --flow-values go together",
                    ))
                }
            };
            losses::kl_loss(&z, &posterior, &prior, &flow)?.item()
        }
        LossKind::Total => {
            let values = parse_five(
                args.values
                    .as_deref()
                    .ok_or_else(|| Error::invalid("loss-eval: missing --values"))?,
                "values",
            )?;
            let weights = match &args.weights {
                Some(w) => parse_five(w, "weights")?,
                None => [1.0; 5],
            };
            values.iter().zip(&weights).map(|(v, w)| v * w).sum()
        }
    };
    println!("{value}");
    Ok(())
}

fn cmd_verify(args: VerifyArgs) -> Result<i32> {
    let Some(suites) = verify::Suite::parse(&args.suite) else {
        return Err(Error::invalid(format!(
            "verify: unknown suite `{}` (expected all|mas|flows|losses|grad|dsp|sdp)",
            args.suite
        )));
    };
    let mut failed = 0usize;
    let mut total = 0usize;
    for suite in suites {
        for result in verify::run_suite(suite, args.seed) {
            println!("{result}");
            total += 1;
            if !result.passed {
                failed += 1;
            }
        }
    }
    println!("{}/{} checks passed", total - failed, total);
    Ok(if failed > 0 { 1 } else { 0 })
}
