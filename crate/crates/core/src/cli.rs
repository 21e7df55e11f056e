//! The `scs2ut` command line: one subcommand per stage of the workflow.
//!
//! Exit codes: 0 success, 2 bad config or usage, 3 missing file, 1 anything else.
//! Failures print one line, `error[<category>]: <message>`, on stderr.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::audio_dsp::{
    f0_autocorr, mel_spectrogram, read_mel_file, read_wav, save_mel_png, write_mel_file, write_wav, F0Config, GriffinLimConfig, MelConfig,
};
use crate::corpus::{generate_toy_corpus, load_manifest, Role, ToyCorpus, ToyCorpusSpec};
use crate::error::{Error, Result};
use crate::evalsuite::{measure_efficiency, write_report, BenchConfig, EvalReport};
use crate::pipeline::{evaluate_toy, EvalOptions, SpeechTranslator};
use crate::quantizer::{write_unit_file, KMeansConfig};
use crate::s2ut::{write_hypotheses, DecodeMode};
use crate::trainer::data::fit_units;
use crate::trainer::{run_stage, Stage, StageConfig};

/// Default corpus root for `gen-corpus` and relative manifest paths.
pub const DATA_DIR_ENV: &str = "SCS2UT_DATA_DIR";

#[derive(Debug, Parser)]
#[command(name = "scs2ut", version, about = "Speaker-consistent speech-to-unit translation on a synthetic toy corpus")]
pub struct Cli {
    /// Overrides the seed of the config (or of the corpus spec).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Config file; same as the positional argument of the subcommands that take one.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize the toy parallel corpus (TOML or JSON spec; defaults when omitted).
    GenCorpus { spec: Option<PathBuf> },
    /// Fit the k-means codebook on a manifest and write its unit file.
    FitUnits {
        manifest: PathBuf,
        #[arg(long, default_value_t = 100)]
        k: usize,
        #[arg(long, default_value_t = 50)]
        max_iters: usize,
    },
    /// Unit-to-mel reconstruction pretraining on canonical-voice data.
    PretrainA(ConfigArg),
    /// Speaker-adapter pretraining on multi-speaker prompt/target halves.
    PretrainB(ConfigArg),
    /// Joint fine-tuning initialised from both pretraining checkpoints.
    Finetune(ConfigArg),
    /// Speech-to-unit translation training.
    TrainS2ut(ConfigArg),
    /// Translate one waveform, keeping the source voice.
    Translate {
        config: Option<PathBuf>,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Voice prompt; defaults to the input.
        #[arg(long)]
        speaker: Option<PathBuf>,
    },
    /// Unit accuracy, toy BLEU, speaker similarity and timing on a corpus split.
    Evaluate {
        config: Option<PathBuf>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Timing only.
    Bench {
        config: Option<PathBuf>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Render a mel spectrogram (from a wav or a .mel file) as PNG, optionally with F0.
    PlotMel {
        input: PathBuf,
        #[arg(long)]
        f0: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Inference and evaluation settings for `translate`, `evaluate` and `bench`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub s2ut_checkpoint: PathBuf,
    /// Normally the fine-tuned unit-to-mel checkpoint.
    pub u2m_checkpoint: PathBuf,
    /// Toy corpus root; falls back to `$SCS2UT_DATA_DIR`.
    pub corpus: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// 0 or 1 decodes greedily.
    pub beam: usize,
    /// Defaults to the limit stored with the s2ut checkpoint.
    pub max_decode_len: Option<usize>,
    pub seed: u64,
    pub griffin_lim: GriffinLimConfig,
    pub eval: EvalOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            s2ut_checkpoint: PathBuf::new(),
            u2m_checkpoint: PathBuf::new(),
            corpus: None,
            out_dir: PathBuf::from("eval"),
            beam: 0,
            max_decode_len: None,
            seed: 0,
            griffin_lim: GriffinLimConfig::default(),
            eval: EvalOptions::default(),
        }
    }
}

fn from_toml<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    serde_path_to_error::deserialize(toml::Deserializer::new(text))
        .map_err(|e| Error::InvalidConfig(format!("{}: {}", e.path(), e.inner().message())))
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(std::fs::read_to_string(path)?)
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        from_toml(text)
    }

    /// Parses and resolves relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml_str(&read_text(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.s2ut_checkpoint, &mut cfg.u2m_checkpoint, &mut cfg.out_dir].into_iter().chain(cfg.corpus.as_mut()) {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        }
        if cfg.s2ut_checkpoint.as_os_str().is_empty() || cfg.u2m_checkpoint.as_os_str().is_empty() {
            return Err(Error::InvalidConfig("s2ut_checkpoint and u2m_checkpoint are required".into()));
        }
        Ok(cfg)
    }

    pub fn translator(&self) -> Result<SpeechTranslator> {
        let mut tr = SpeechTranslator::load(&self.s2ut_checkpoint, &self.u2m_checkpoint)?;
        tr.decode = if self.beam > 1 { DecodeMode::Beam(self.beam) } else { DecodeMode::Greedy };
        if let Some(n) = self.max_decode_len {
            tr.max_len = n;
        }
        tr.griffin_lim = GriffinLimConfig { seed: self.seed, ..self.griffin_lim.clone() };
        Ok(tr)
    }

    pub fn corpus_root(&self) -> Result<PathBuf> {
        self.corpus
            .clone()
            .or_else(data_dir)
            .ok_or_else(|| Error::InvalidConfig(format!("no corpus given and ${DATA_DIR_ENV} is unset")))
    }
}

fn data_dir() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

/// Relative paths that do not exist are retried under `$SCS2UT_DATA_DIR`.
fn resolve_data_path(p: &Path) -> PathBuf {
    match data_dir() {
        Some(root) if p.is_relative() && !p.exists() => root.join(p),
        _ => p.to_path_buf(),
    }
}

/// Exit code for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e.category() {
        "invalid-config" | "parse" => 2,
        "missing-file" => 3,
        _ => 1,
    }
}

/// Single-line rendering of an error.
pub fn error_line(e: &Error) -> String {
    let msg = e.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
    format!("error[{}]: {msg}", e.category())
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_env("SCS2UT_LOG").try_init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            exit_code(&e)
        }
    }
}

fn config_path(positional: &Option<PathBuf>, global: &Option<PathBuf>) -> Result<PathBuf> {
    match (positional, global) {
        (Some(a), Some(b)) if a != b => Err(Error::InvalidConfig(format!("two configs given: {} and {}", a.display(), b.display()))),
        (Some(p), _) | (None, Some(p)) => Ok(p.clone()),
        (None, None) => Err(Error::InvalidConfig("a config file is required".into())),
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenCorpus { spec } => gen_corpus(cli, spec.as_ref().or(cli.config.as_ref())),
        Command::FitUnits { manifest, k, max_iters } => cmd_fit_units(cli, manifest, *k, *max_iters),
        Command::PretrainA(a) => train(cli, Stage::PretrainA, &a.config),
        Command::PretrainB(a) => train(cli, Stage::PretrainB, &a.config),
        Command::Finetune(a) => train(cli, Stage::Finetune, &a.config),
        Command::TrainS2ut(a) => train(cli, Stage::S2ut, &a.config),
        Command::Translate { config, input, out, speaker } => translate(cli, config, input, out, speaker.as_deref()),
        Command::Evaluate { config, warmup, runs } => evaluate(cli, config, *warmup, *runs, false),
        Command::Bench { config, warmup, runs } => evaluate(cli, config, *warmup, *runs, true),
        Command::PlotMel { input, f0, out } => plot_mel(input, *f0, out),
    }
}

fn gen_corpus(cli: &Cli, spec_path: Option<&PathBuf>) -> Result<()> {
    let mut spec: ToyCorpusSpec = match spec_path {
        None => ToyCorpusSpec::default(),
        Some(p) => {
            let text = read_text(p)?;
            if p.extension().is_some_and(|e| e == "json") {
                let de = &mut serde_json::Deserializer::from_str(&text);
                serde_path_to_error::deserialize(de).map_err(|e| Error::InvalidConfig(format!("{}: {}", e.path(), e.inner())))?
            } else {
                from_toml(&text)?
            }
        }
    };
    if let Some(s) = cli.seed {
        spec.seed = s;
    }
    let root = cli
        .out_dir
        .clone()
        .or_else(data_dir)
        .ok_or_else(|| Error::InvalidConfig(format!("gen-corpus needs --out-dir or ${DATA_DIR_ENV}")))?;
    let corpus = generate_toy_corpus(&spec, &root)?;
    println!(
        "{}",
        serde_json::json!({ "root": corpus.root, "speakers": corpus.speakers.len(), "train_pairs": spec.n_pairs,
            "dev_pairs": spec.n_dev_pairs, "test_pairs": spec.n_test_pairs })
    );
    Ok(())
}

fn cmd_fit_units(cli: &Cli, manifest: &Path, k: usize, max_iters: usize) -> Result<()> {
    let path = resolve_data_path(manifest);
    let m = load_manifest(&path)?;
    let mel = match &cli.config {
        Some(p) => StageConfig::load(p)?.mel,
        None => MelConfig::default(),
    };
    let kmeans = KMeansConfig { k, max_iters, seed: cli.seed.unwrap_or(0), ..Default::default() };
    let (cb, units) = fit_units(&m, &mel, &kmeans)?;
    let out = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("units"));
    std::fs::create_dir_all(&out)?;
    cb.save(out.join("codebook.bin"))?;
    write_unit_file(out.join("units.txt"), &units)?;
    println!("{}", serde_json::json!({ "codebook": out.join("codebook.bin"), "units": out.join("units.txt"), "k": cb.k, "utterances": units.len() }));
    Ok(())
}

fn train(cli: &Cli, stage: Stage, positional: &Option<PathBuf>) -> Result<()> {
    let path = config_path(positional, &cli.config)?;
    let raw: toml::Table = read_text(&path)?.parse().map_err(|e: toml::de::Error| Error::InvalidConfig(e.message().to_string()))?;
    let mut cfg = StageConfig::load(&path)?;
    match raw.get("stage") {
        Some(_) if cfg.stage != stage => {
            return Err(Error::InvalidConfig(format!("config is for stage {}, not {stage}", cfg.stage)));
        }
        _ => cfg.stage = stage,
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = d.clone();
    }
    cfg.validate()?;
    let o = run_stage(&cfg)?;
    println!(
        "{}",
        serde_json::json!({ "stage": stage.as_str(), "checkpoint": o.checkpoint, "steps": o.steps, "final_loss": o.final_loss(),
            "initial_eval_loss": o.initial_eval_loss, "final_eval_loss": o.final_eval_loss, "processed": o.processed,
            "skipped": o.skipped, "dev_unit_accuracy": o.dev_unit_accuracy })
    );
    Ok(())
}

fn load_run_config(cli: &Cli, positional: &Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&config_path(positional, &cli.config)?)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = d.clone();
    }
    Ok(cfg)
}

fn translate(cli: &Cli, config: &Option<PathBuf>, input: &Path, out: &Path, speaker: Option<&Path>) -> Result<()> {
    let cfg = load_run_config(cli, config)?;
    let tr = cfg.translator()?;
    let source = read_wav(input)?;
    let prompt = match speaker {
        Some(p) => read_wav(p)?,
        None => source.clone(),
    };
    let t = tr.translate_with_speaker(&source, &prompt)?;
    let out = if out.is_relative() && cli.out_dir.is_some() { cfg.out_dir.join(out) } else { out.to_path_buf() };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let id = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into());
    write_wav(&out, &t.wav)?;
    write_mel_file(out.with_extension("mel"), &t.mel)?;
    write_hypotheses(&out.with_extension("units"), &[(id, t.hypothesis.clone())])?;
    println!(
        "{}",
        serde_json::json!({ "out": out, "units": t.hypothesis.units.len(), "frames": t.mel.n_frames,
            "seconds": t.wav.duration_seconds(), "truncated": t.hypothesis.truncated })
    );
    Ok(())
}

fn evaluate(cli: &Cli, config: &Option<PathBuf>, warmup: Option<usize>, runs: Option<usize>, bench_only: bool) -> Result<()> {
    let cfg = load_run_config(cli, config)?;
    let corpus = ToyCorpus::open(cfg.corpus_root()?)?;
    let mut tr = cfg.translator()?;
    let mut opts = cfg.eval.clone();
    if warmup.is_some() || runs.is_some() {
        let b = opts.bench.unwrap_or_default();
        opts.bench = Some(BenchConfig { warmup: warmup.unwrap_or(b.warmup), runs: runs.unwrap_or(b.runs) });
    }
    let report = if bench_only {
        let bench = opts.bench.unwrap_or_default();
        let m = load_manifest(corpus.manifest_path(&opts.split, Role::Source))?;
        let rows = &m.rows[..m.rows.len().min(opts.max_utts)];
        let wavs = rows.iter().map(|u| read_wav(m.wav_path(u))).collect::<Result<Vec<_>>>()?;
        EvalReport { n_utts: wavs.len(), efficiency: Some(measure_efficiency(&mut tr, &wavs, &bench)?), ..Default::default() }
    } else {
        evaluate_toy(&mut tr, &corpus, &opts)?
    };
    write_report(&cfg.out_dir, &report)?;
    print!("{}", report.summary());
    Ok(())
}

fn plot_mel(input: &Path, with_f0: bool, out: &Path) -> Result<()> {
    let is_wav = input.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"));
    if !is_wav && with_f0 {
        return Err(Error::InvalidInput("--f0 needs a waveform input".into()));
    }
    if is_wav {
        let w = read_wav(input)?;
        let cfg = MelConfig { rate: w.rate, fmax: (w.rate as f64 / 2.0).min(8000.0), ..Default::default() };
        let m = mel_spectrogram(&w, &cfg)?;
        let f0 = if with_f0 {
            Some(f0_autocorr(&w, &F0Config { hop_seconds: cfg.hop_seconds(), ..Default::default() })?)
        } else {
            None
        };
        save_mel_png(out, &m, &cfg, f0.as_deref())
    } else {
        let m = read_mel_file(input)?;
        let cfg = MelConfig { n_mels: m.n_mels, ..Default::default() };
        save_mel_png(out, &m, &cfg, None)
    }
}
