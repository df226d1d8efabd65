//! `ser` command line: prepare, train, evaluate, predict, serve.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure. Logs go to
//! stderr, results to stdout.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::dataset::{self, ClassLabel, LabeledExample, ManifestEntry, SplitKey, SplitTag, TEST_SET_SIZE};
use crate::dsp::MelExtractor;
use crate::eval::{evaluate, format_report};
use crate::model::{build_ser_model, SerModel};
use crate::optim::{train, TrainingConfig};
use crate::pipeline::features_from_wav;
use crate::service::{self, ServiceConfig, DEFAULT_MAX_UPLOAD_BYTES};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "ser",
    version,
    about = "Speech emotion recognition: log-mel features and a CNN trained from scratch"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Scan a RAVDESS directory, featurize every speech clip and write a train/test manifest
    Prepare {
        /// Root of the RAVDESS tree (Actor_NN/MM-VV-EE-II-SS-RR-AA.wav)
        #[arg(long, value_name = "DIR")]
        data_dir: PathBuf,
        /// Manifest file to write
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Seed for the test-set draw
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a fresh model on the manifest's train split
    Train {
        /// Manifest written by `prepare`
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        /// Model file to write
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[arg(long, default_value_t = 125)]
        epochs: usize,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        /// Seed for weight init, shuffling and dropout
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        /// Also write per-epoch loss/accuracy here
        #[arg(long, value_name = "FILE")]
        history: Option<PathBuf>,
    },
    /// Score a model on the manifest's test split
    Evaluate {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Manifest written by `prepare`
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        /// Text report; a JSON copy is written next to it with a .json extension
        #[arg(long, value_name = "FILE")]
        report: PathBuf,
    },
    /// Rank the classes for one WAV file
    Predict {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[arg(long, value_name = "FILE")]
        wav: PathBuf,
        /// Number of ranked classes to print
        #[arg(long, default_value_t = 5)]
        top: usize,
    },
    /// Run the HTTP prediction service
    Serve {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Directory of built UI assets served at /
        #[arg(long, value_name = "DIR")]
        ui_dir: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MAX_UPLOAD_BYTES)]
        max_upload_bytes: usize,
    },
}

type CliResult = Result<(), Box<dyn std::error::Error + Send + Sync>>;

/// Parse `args` (program name first) and run. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_FAILURE
        }
    }
}

fn execute(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    match cmd {
        Command::Prepare {
            data_dir,
            out: path,
            seed,
        } => prepare(&data_dir, &path, seed, out, err),
        Command::Train {
            manifest,
            out: path,
            epochs,
            batch,
            seed,
            lr,
            history,
        } => {
            let config = TrainingConfig {
                epochs,
                batch_size: batch,
                seed,
                lr,
                shuffle: true,
            };
            train_cmd(&manifest, &path, &config, history.as_deref(), out)
        }
        Command::Evaluate {
            model,
            manifest,
            report,
        } => evaluate_cmd(&model, &manifest, &report, out),
        Command::Predict { model, wav, top } => predict_cmd(&model, &wav, top, out),
        Command::Serve {
            model,
            port,
            host,
            ui_dir,
            max_upload_bytes,
        } => {
            let config = ServiceConfig {
                bind: SocketAddr::new(host, port),
                model_path: model,
                max_upload_bytes,
                static_asset_dir: ui_dir,
            };
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(service::serve(config))?;
            Ok(())
        }
    }
}

fn prepare(data_dir: &Path, path: &Path, seed: u64, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let extractor = MelExtractor::default();
    let ds = dataset::build_dataset(data_dir, &extractor)?;
    for s in &ds.skipped {
        writeln!(err, "skipped {}: {}", s.path.display(), s.reason)?;
    }
    let keys: Vec<SplitKey> = ds.examples.iter().map(SplitKey::from).collect();
    let split = dataset::split_indices(&keys, seed, TEST_SET_SIZE)?;
    let mut tags = vec![SplitTag::Train; ds.examples.len()];
    for &i in &split.test {
        tags[i] = SplitTag::Test;
    }
    let entries: Vec<ManifestEntry> = ds
        .examples
        .iter()
        .zip(&tags)
        .map(|(e, &split)| ManifestEntry {
            path: PathBuf::from(&e.source_id),
            class_index: e.label.index(),
            actor_id: e.actor_id,
            split,
        })
        .collect();
    let mut buf = Vec::new();
    dataset::write_manifest(&entries, &mut buf)?;
    fs::write(path, buf)?;
    writeln!(
        out,
        "{} examples ({} train, {} test), {} files skipped -> {}",
        entries.len(),
        split.train.len(),
        split.test.len(),
        ds.skipped.len(),
        path.display()
    )?;
    Ok(())
}

/// Featurize the manifest entries tagged `tag`.
pub fn load_split(
    manifest: &Path,
    tag: SplitTag,
) -> Result<Vec<LabeledExample>, Box<dyn std::error::Error + Send + Sync>> {
    let extractor = MelExtractor::default();
    let entries = dataset::read_manifest_file(manifest)?;
    let mut examples = Vec::new();
    for e in entries.into_iter().filter(|e| e.split == tag) {
        let bytes = fs::read(&e.path).map_err(|io| format!("{}: {io}", e.path.display()))?;
        let processed = features_from_wav(&bytes, &extractor).map_err(|p| format!("{}: {p}", e.path.display()))?;
        examples.push(LabeledExample {
            features: processed.features,
            label: ClassLabel::from_index(e.class_index).expect("manifest validates class index"),
            actor_id: e.actor_id,
            source_id: e.path.to_string_lossy().into_owned(),
        });
    }
    Ok(examples)
}

fn train_cmd(
    manifest: &Path,
    path: &Path,
    config: &TrainingConfig,
    history_path: Option<&Path>,
    out: &mut dyn Write,
) -> CliResult {
    config.validate()?;
    let examples = load_split(manifest, SplitTag::Train)?;
    if examples.is_empty() {
        return Err("manifest has no training examples".into());
    }
    let model = build_ser_model(config.seed);
    let (model, history) = train(model, &examples, config)?;
    model.save(path)?;
    if let Some(h) = history_path {
        fs::write(h, history.to_text())?;
    }
    if let Some(last) = history.final_record() {
        writeln!(
            out,
            "trained {} epochs on {} examples: loss {:.4}, accuracy {:.4} -> {}",
            last.epoch,
            examples.len(),
            last.train_loss,
            last.train_acc,
            path.display()
        )?;
    }
    Ok(())
}

fn evaluate_cmd(model_path: &Path, manifest: &Path, report_path: &Path, out: &mut dyn Write) -> CliResult {
    let model = SerModel::load(model_path)?;
    let test = load_split(manifest, SplitTag::Test)?;
    let report = evaluate(&model, &test)?;
    let text = format_report(&report);
    fs::write(report_path, &text)?;
    fs::write(report_path.with_extension("json"), report.to_json())?;
    write!(out, "{text}")?;
    Ok(())
}

fn predict_cmd(model_path: &Path, wav: &Path, top: usize, out: &mut dyn Write) -> CliResult {
    let model = SerModel::load(model_path)?;
    let bytes = fs::read(wav).map_err(|e| format!("{}: {e}", wav.display()))?;
    let processed = features_from_wav(&bytes, &MelExtractor::default())?;
    let prediction = model.predict(&processed.features)?;
    for (i, r) in prediction.ranked.iter().take(top.max(1)).enumerate() {
        writeln!(
            out,
            "{:>2}. {:<16} {:6.2}%",
            i + 1,
            r.label.to_string(),
            100.0 * r.probability
        )?;
    }
    Ok(())
}
