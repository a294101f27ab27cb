use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use casa_sid::audio::{read_wav, write_wav};
use casa_sid::cascade::{
    ablate, compare_rows, evaluate_modes, identify_with, load_system, save_system, train_system_on, AblationMode,
    AblationReport, DecisionMode, SystemConfig,
};
use casa_sid::casa::segregate;
use casa_sid::cnn::sha256_hex;
use casa_sid::dataset::{load_dataset, synth_dataset, write_dataset, SynthDatasetConfig};
use casa_sid::eval::DEFAULT_ALPHA;
use casa_sid::mfcc::{mfcc_features, write_features, DumpFormat};
use casa_sid::{Error, Result};

/// Noise-robust speaker identification with a CASA front end and a cascaded
/// GMM-CNN back end.
#[derive(Parser)]
#[command(name = "casa-sid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segregate the dominant voice from a noisy WAV file.
    Segregate {
        input: PathBuf,
        output: PathBuf,
        /// JSON configuration file; missing keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write ibm.bin (+ ibm.json), fmask.json and pitch.json here.
        #[arg(long, value_name = "DIR")]
        dump_diagnostics: Option<PathBuf>,
    },
    /// Extract 32-dimensional MFCC + delta features.
    Features {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Train a system bundle from a manifest's train split.
    Train {
        manifest: PathBuf,
        out_dir: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the configuration seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Identify the speaker and emotion of one WAV file; prints JSON.
    Identify {
        input: PathBuf,
        model_dir: PathBuf,
        /// Skip segregation even if the model was configured with it.
        #[arg(long)]
        no_casa: bool,
        #[arg(long, value_enum, default_value_t = Mode::GmmCnn)]
        mode: Mode,
    },
    /// Evaluate on a manifest's test split. With MODEL_DIR the modes are
    /// applied at test time to that model; without it one system is trained
    /// per segregation setting.
    Evaluate {
        manifest: PathBuf,
        model_dir: Option<PathBuf>,
        /// Comma-separated: gmm_only, cnn_only, gmm_cnn, casa_on, casa_off.
        #[arg(long, default_value = "gmm_cnn")]
        modes: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the JSON report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also print the aligned text table to standard error.
        #[arg(long)]
        table: bool,
    },
    /// Render a synthetic corpus of WAV files plus manifest.jsonl.
    Synth {
        out_dir: PathBuf,
        #[arg(long, default_value_t = 4)]
        speakers: usize,
        #[arg(long, default_value_t = 2)]
        emotions: usize,
        #[arg(long, default_value_t = 6)]
        utterances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
        #[arg(long, default_value_t = 8000)]
        sample_rate: u32,
        /// Target-to-noise energy ratio for white noise on the test split.
        #[arg(long)]
        test_noise_ratio: Option<f64>,
        /// As --test-noise-ratio, for the train split.
        #[arg(long)]
        train_noise_ratio: Option<f64>,
    },
    /// Inspect configuration.
    Config {
        /// Print the full default configuration as JSON.
        #[arg(long)]
        print_defaults: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Binary,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Mode {
    GmmOnly,
    CnnOnly,
    GmmCnn,
}

fn load_config(path: Option<&Path>) -> Result<SystemConfig> {
    let config = match path {
        None => SystemConfig::default(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.to_path_buf(),
                source: e,
            })?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
    };
    config.validate()?;
    Ok(config)
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn pretty(v: &impl serde::Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

fn cmd_segregate(input: &Path, output: &Path, config: Option<&Path>, dump: Option<&Path>) -> Result<()> {
    let config = load_config(config)?;
    let clip = read_wav(input)?;
    let (out, diag) = segregate(&clip, &config.casa)?;
    write_wav(&out, output)?;
    if let Some(dir) = dump {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let bits: Vec<u8> = diag.ibm.bits.iter().flatten().map(|&b| u8::from(b)).collect();
        write_file(&dir.join("ibm.bin"), &bits)?;
        let rows = diag.ibm.bits.len();
        let cols = diag.ibm.bits.first().map_or(0, Vec::len);
        write_file(
            &dir.join("ibm.json"),
            pretty(&json!({"rows": rows, "cols": cols, "layout": "u8 row-major, rows are frames"}))?,
        )?;
        write_file(
            &dir.join("fmask.json"),
            pretty(&json!({
                "gains": diag.frequency_mask.gains,
                "target_energy": diag.energies.target,
                "interference_energy": diag.energies.interference,
                "pass_through": diag.pass_through,
            }))?,
        )?;
        let hop_s = diag.pitch.params.hop as f64 / diag.pitch.sample_rate as f64;
        write_file(
            &dir.join("pitch.json"),
            pretty(&json!({
                "hop_s": hop_s,
                "frame_len": diag.pitch.params.frame_len,
                "sample_rate": diag.pitch.sample_rate,
                "f0_hz": diag.pitch.frames,
            }))?,
        )?;
    }
    Ok(())
}

fn cmd_features(input: &Path, output: &Path, config: Option<&Path>, format: Format) -> Result<()> {
    let config = load_config(config)?;
    let m = mfcc_features(&read_wav(input)?, &config.mfcc)?;
    let format = match format {
        Format::Text => DumpFormat::Text,
        Format::Binary => DumpFormat::Binary,
    };
    write_features(&m, output, format)
}

fn cmd_train(manifest: &Path, out_dir: &Path, config: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let mut config = load_config(config)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let bytes = fs::read(manifest).map_err(|e| Error::Io {
        path: manifest.to_path_buf(),
        source: e,
    })?;
    let clips = load_dataset(manifest)?;
    let train: Vec<_> = clips.iter().filter(|c| c.split == casa_sid::audio::Split::Train).collect();
    let model = train_system_on(&train, &config, sha256_hex(&bytes))?;
    save_system(&model, out_dir)?;
    log::info!("trained {} tags for {} speakers", model.bank.len(), model.speakers.len());
    Ok(())
}

fn cmd_identify(input: &Path, model_dir: &Path, no_casa: bool, mode: Mode) -> Result<()> {
    let model = load_system(model_dir)?;
    let clip = read_wav(input)?;
    let mode = match mode {
        Mode::GmmOnly => DecisionMode::GmmOnly,
        Mode::CnnOnly => DecisionMode::CnnOnly,
        Mode::GmmCnn => DecisionMode::GmmCnn,
    };
    let r = identify_with(&clip, &model, model.config.casa_test && !no_casa, mode)?;
    println!(
        "{}",
        json!({"speaker": r.speaker, "emotion": r.emotion, "confidence": r.confidence})
    );
    Ok(())
}

fn report_json(report: &AblationReport) -> serde_json::Value {
    let rows: Vec<_> = report
        .rows
        .iter()
        .map(|r| {
            json!({
                "mode": r.mode.name(),
                "casa_train": r.casa_train,
                "casa_test": r.casa_test,
                "report": r.report,
                "per_emotion_sid": r.per_emotion_sid,
                "per_cell_sid": r.per_cell_sid,
                "seconds": r.seconds,
                "cost_ratio": r.cost_ratio,
            })
        })
        .collect();
    let mut out = json!({"rows": rows});
    if let [a, b] = report.rows.as_slice() {
        out["wilcoxon"] = match compare_rows(a, b, DEFAULT_ALPHA) {
            Ok(w) => json!({"a": a.mode.name(), "b": b.mode.name(), "result": w}),
            Err(e) => json!({"a": a.mode.name(), "b": b.mode.name(), "p_value": null, "reason": e.to_string()}),
        };
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    manifest: &Path,
    model_dir: Option<&Path>,
    modes: &str,
    config: Option<&Path>,
    seed: Option<u64>,
    out: Option<&Path>,
    table: bool,
) -> Result<()> {
    let modes = modes
        .split(',')
        .filter(|m| !m.trim().is_empty())
        .map(AblationMode::parse)
        .collect::<Result<Vec<_>>>()?;
    if modes.is_empty() {
        return Err(Error::Config("--modes is empty".into()));
    }
    let clips = load_dataset(manifest)?;
    let report = match model_dir {
        Some(dir) => {
            if config.is_some() || seed.is_some() {
                return Err(Error::Config("--config and --seed apply only when training (no MODEL_DIR)".into()));
            }
            evaluate_modes(&clips, &load_system(dir)?, &modes)?
        }
        None => {
            let mut cfg = load_config(config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            ablate(&clips, &cfg, &modes)?
        }
    };
    if table {
        eprint!("{}", report.render_table());
    }
    let text = pretty(&report_json(&report))?;
    match out {
        Some(p) => write_file(p, text),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Segregate {
            input,
            output,
            config,
            dump_diagnostics,
        } => cmd_segregate(&input, &output, config.as_deref(), dump_diagnostics.as_deref()),
        Command::Features {
            input,
            output,
            config,
            format,
        } => cmd_features(&input, &output, config.as_deref(), format),
        Command::Train {
            manifest,
            out_dir,
            config,
            seed,
        } => cmd_train(&manifest, &out_dir, config.as_deref(), seed),
        Command::Identify {
            input,
            model_dir,
            no_casa,
            mode,
        } => cmd_identify(&input, &model_dir, no_casa, mode),
        Command::Evaluate {
            manifest,
            model_dir,
            modes,
            config,
            seed,
            out,
            table,
        } => cmd_evaluate(
            &manifest,
            model_dir.as_deref(),
            &modes,
            config.as_deref(),
            seed,
            out.as_deref(),
            table,
        ),
        Command::Synth {
            out_dir,
            speakers,
            emotions,
            utterances,
            seed,
            duration,
            sample_rate,
            test_noise_ratio,
            train_noise_ratio,
        } => {
            let cfg = SynthDatasetConfig {
                speakers,
                emotions,
                utterances,
                seed,
                duration_s: duration,
                sample_rate,
                test_noise_ratio,
                train_noise_ratio,
                ..SynthDatasetConfig::default()
            };
            let clips = synth_dataset(&cfg)?;
            let manifest = write_dataset(&clips, &out_dir)?;
            log::info!("wrote {} clips and {}", clips.len(), manifest.display());
            Ok(())
        }
        Command::Config { print_defaults } => {
            if !print_defaults {
                return Err(Error::Config("nothing to do; try --print-defaults".into()));
            }
            println!("{}", pretty(&SystemConfig::default())?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 3,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
