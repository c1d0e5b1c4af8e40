//! `chunkstream` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chunkstream::acoustic::ScoreSequence;
use chunkstream::pipeline::{
    bench, random_weights, synth, verify, write_wav, BundleConfig, Check, Mode, ModelBundle, SynthOptions,
};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "chunkstream", version, about = "Chunkwise streaming singing-voice synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Parallel,
    Semi,
    Full,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Parallel => Mode::Parallel,
            ModeArg::Semi => Mode::Semi,
            ModeArg::Full => Mode::Full,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Preset {
    /// 44.1 kHz, hop 512
    #[value(name = "44k")]
    Sr44k,
    /// 16 kHz, hop 256
    #[value(name = "16k")]
    Sr16k,
}

#[derive(clap::Args, Debug)]
struct ModelArgs {
    /// Model config (JSON)
    #[arg(long)]
    config: PathBuf,

    /// Weight file (CSSW)
    #[arg(long)]
    weights: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize a score to a WAV file
    Synth {
        #[command(flatten)]
        model: ModelArgs,

        /// Score file: one `phoneme<TAB>note<TAB>frames` line per phone
        #[arg(long)]
        score: PathBuf,

        #[arg(long, value_enum, default_value = "full")]
        mode: ModeArg,

        /// Decoder chunk size in frames (config value when omitted)
        #[arg(long)]
        chunk_size: Option<usize>,

        #[arg(long)]
        left_context: Option<usize>,

        #[arg(long)]
        right_context: Option<usize>,

        /// Seed for the latent noise
        #[arg(long, default_value_t = 0)]
        seed: u64,

        /// Run decoder and vocoder on separate threads (full mode)
        #[arg(long)]
        pipelined: bool,

        #[arg(long)]
        out: PathBuf,

        /// Also write latency metrics and the chunk trace as JSON
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Time synthesis over a directory of score files
    Bench {
        #[command(flatten)]
        model: ModelArgs,

        /// Directory of `*.txt` score files
        #[arg(long)]
        scores: PathBuf,

        #[arg(long, value_enum, default_value = "full")]
        mode: ModeArg,

        #[arg(long, default_value_t = 20)]
        repeats: usize,

        #[arg(long, default_value_t = 3)]
        warmup: usize,

        #[arg(long)]
        pipelined: bool,

        /// Write the report here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in consistency checks against a model
    Verify {
        #[command(flatten)]
        model: ModelArgs,

        /// Checks to run (all when omitted)
        #[arg(long = "check")]
        checks: Vec<String>,
    },
    /// Write a seeded random weight file for a config
    MakeRandomModel {
        #[arg(long)]
        config: PathBuf,

        #[arg(long, default_value_t = 0)]
        seed: u64,

        #[arg(long)]
        out: PathBuf,

        /// Create the config from a preset first (fails if it exists)
        #[arg(long, value_enum)]
        init_config: Option<Preset>,
    },
}

const DEFAULT_VOCAB: &[&str] = &["sil", "sp", "a", "e", "i", "o", "u", "n", "m", "l", "d", "t"];

fn load_model(m: &ModelArgs) -> Result<ModelBundle> {
    ModelBundle::load(&m.config, &m.weights)
        .with_context(|| format!("loading {} with {}", m.config.display(), m.weights.display()))
}

fn read_score(path: &Path, bundle: &ModelBundle) -> Result<ScoreSequence> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(ScoreSequence::parse(&text, &bundle.config.vocab)?)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth {
            model,
            score,
            mode,
            chunk_size,
            left_context,
            right_context,
            seed,
            pipelined,
            out,
            metrics,
        } => {
            let mut bundle = load_model(&model)?;
            let cfg = bundle.decoder.cfg.clone();
            bundle.set_stream_window(
                chunk_size.unwrap_or(cfg.chunk_size),
                left_context.unwrap_or(cfg.left_context),
                right_context.unwrap_or(cfg.right_context),
            )?;
            let score = read_score(&score, &bundle)?;
            let opts = SynthOptions {
                mode: mode.into(),
                seed,
                pipelined,
            };
            let result = synth(&score, &bundle, opts)?;
            write_wav(&out, &result.waveform, bundle.config.sample_rate)?;
            let report = serde_json::json!({
                "mode": opts.mode,
                "samples": result.waveform.len(),
                "sample_rate": bundle.config.sample_rate,
                "metrics": result.metrics,
                "chunks": result.chunks,
            });
            if let Some(path) = metrics {
                std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")?;
            }
            eprintln!(
                "wrote {} ({} samples, latency {:.3}s, rtf {:.3})",
                out.display(),
                result.waveform.len(),
                result.metrics.latency_s,
                result.metrics.rtf
            );
        }
        Command::Bench {
            model,
            scores,
            mode,
            repeats,
            warmup,
            pipelined,
            out,
        } => {
            let bundle = load_model(&model)?;
            let mut paths: Vec<PathBuf> = std::fs::read_dir(&scores)
                .with_context(|| format!("listing {}", scores.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "txt"))
                .collect();
            paths.sort();
            if paths.is_empty() {
                bail!("no .txt score files in {}", scores.display());
            }
            let set = paths
                .iter()
                .map(|p| {
                    let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                    Ok((name, read_score(p, &bundle)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let opts = SynthOptions {
                mode: mode.into(),
                seed: 0,
                pipelined,
            };
            let report = bench(&set, &bundle, opts, repeats, warmup)?;
            let text = serde_json::to_string_pretty(&report)? + "\n";
            match out {
                Some(path) => std::fs::write(path, text)?,
                None => print!("{text}"),
            }
        }
        Command::Verify { model, checks } => {
            let bundle = load_model(&model)?;
            let checks = if checks.is_empty() {
                Check::ALL.to_vec()
            } else {
                checks.iter().map(|c| c.parse()).collect::<Result<Vec<Check>, _>>()?
            };
            let report = verify(&bundle, &checks);
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.all_passed() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::MakeRandomModel {
            config,
            seed,
            out,
            init_config,
        } => {
            if let Some(preset) = init_config {
                if config.exists() {
                    bail!("{} already exists", config.display());
                }
                let vocab = DEFAULT_VOCAB.iter().map(|s| s.to_string()).collect();
                let cfg = match preset {
                    Preset::Sr44k => BundleConfig::default_44k(vocab),
                    Preset::Sr16k => BundleConfig::default_16k(vocab),
                };
                cfg.save(&config)?;
            }
            let cfg = BundleConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            random_weights(&cfg, seed)?.save(&out)?;
            eprintln!("wrote {}", out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            let kind = e
                .chain()
                .find_map(|c| {
                    c.downcast_ref::<chunkstream::Error>()
                        .map(|c| c.kind())
                        .or_else(|| c.downcast_ref::<std::io::Error>().map(|_| "io"))
                })
                .unwrap_or("error");
            let msg = serde_json::json!({
                "error": {
                    "kind": kind,
                    "message": format!("{e:#}"),
                }
            });
            eprintln!("{msg}");
            ExitCode::from(2)
        }
    }
}
