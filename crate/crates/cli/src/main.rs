use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand};

use pase::io::RunConfig;
use pase::probe::ProbeMode;
use pase::workers::WorkerName;

mod commands;
mod corpus;

#[derive(Parser, Debug)]
#[command(name = "pase", version, about = "Self-supervised speech encoder: training, probing, feature export")]
struct Cli {
    /// Run config (`[run]`, `[train]`, `[probe]` sections).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the training and probe seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Self-supervised training on an unlabeled manifest.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from `<out>/checkpoint.bin`.
        #[arg(long)]
        resume: bool,
    },
    /// Train without one worker, or run the full drop-one study with `--all`.
    Ablate {
        #[arg(long, value_parser = parse_worker, required_unless_present = "all", conflicts_with = "all")]
        drop: Option<WorkerName>,
        /// Train all-workers plus every drop-one model, probe each, write ablation.tsv.
        #[arg(long)]
        all: bool,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Labeled manifest used by `--all`.
        #[arg(long)]
        probe_manifest: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Write `<stem>.pase` embedding files for WAV inputs.
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Manifest whose entries are extracted, in addition to INPUTS.
        #[arg(long)]
        manifest: Option<PathBuf>,
        inputs: Vec<PathBuf>,
    },
    /// Speaker-ID style probe on a labeled manifest with train/test splits.
    Probe {
        #[arg(long, value_parser = parse_mode)]
        mode: Option<ProbeMode>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Finite-difference check of every op and a tiny end-to-end stack.
    Gradcheck,
    /// Generate the synthetic two-speaker corpora, manifests and a desk config.
    SynthData {
        /// Unlabeled pretraining utterances per speaker.
        #[arg(long, default_value_t = 12)]
        pretrain: usize,
        /// Labeled probe utterances per speaker and split.
        #[arg(long, default_value_t = 10)]
        labeled: usize,
        #[arg(long, default_value_t = 2.0)]
        seconds: f64,
        #[arg(long, default_value_t = 20.0)]
        snr_db: f64,
    },
    /// Turn run outputs under RUN into long-format loss/accuracy TSVs.
    Plotdata { run: PathBuf },
}

fn parse_worker(s: &str) -> std::result::Result<WorkerName, String> {
    s.parse().map_err(|e: pase::Error| e.to_string())
}

fn parse_mode(s: &str) -> std::result::Result<ProbeMode, String> {
    s.parse::<ProbeMode>().map_err(|e| e.to_string())
}

fn usage_error(kind: ErrorKind, msg: &str) -> ! {
    Cli::command().error(kind, msg).exit()
}

/// Config file if given, then flag overrides.
fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.train.seed = s;
        c.probe.config.seed = s;
    }
    if let Some(o) = &cli.out {
        c.out = Some(o.clone());
    }
    Ok(c)
}

fn out_dir(c: &RunConfig) -> PathBuf {
    match &c.out {
        Some(o) => o.clone(),
        None => usage_error(ErrorKind::MissingRequiredArgument, "no output directory: pass --out or set [run] out"),
    }
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn run(cli: Cli) -> Result<bool> {
    let mut c = resolve(&cli)?;
    match cli.command {
        Command::Train { manifest, epochs, resume } => {
            if let Some(m) = manifest {
                c.manifest = Some(m);
            }
            if c.manifest.is_none() {
                usage_error(ErrorKind::MissingRequiredArgument, "train needs a manifest: pass --manifest or set [run] manifest");
            }
            if let Some(e) = epochs {
                c.train.epochs = e;
            }
            let out = out_dir(&c);
            prepare_out(&out)?;
            commands::train(&c, &out, resume)?;
        }
        Command::Ablate { drop, all, manifest, probe_manifest, epochs } => {
            if let Some(m) = manifest {
                c.manifest = Some(m);
            }
            if let Some(m) = probe_manifest {
                c.probe.manifest = Some(m);
            }
            if let Some(e) = epochs {
                c.train.epochs = e;
            }
            if c.manifest.is_none() {
                usage_error(ErrorKind::MissingRequiredArgument, "ablate needs a manifest: pass --manifest or set [run] manifest");
            }
            let out = out_dir(&c);
            prepare_out(&out)?;
            match drop {
                Some(w) => {
                    c.train = c.train.without(w)?;
                    commands::train(&c, &out, false)?;
                }
                None => {
                    debug_assert!(all);
                    if c.probe.manifest.is_none() {
                        usage_error(ErrorKind::MissingRequiredArgument, "ablate --all needs --probe-manifest or [probe] manifest");
                    }
                    commands::ablate_all(&c, &out)?;
                }
            }
        }
        Command::Extract { checkpoint, manifest, mut inputs } => {
            if let Some(m) = manifest {
                inputs.extend(pase::io::Manifest::load(&m)?.entries.into_iter().map(|e| e.path));
            }
            if inputs.is_empty() {
                usage_error(ErrorKind::MissingRequiredArgument, "extract needs input files or --manifest");
            }
            let out = out_dir(&c);
            prepare_out(&out)?;
            return commands::extract(&checkpoint, &inputs, &out);
        }
        Command::Probe { mode, manifest, checkpoint, epochs } => {
            if let Some(m) = mode {
                c.probe.config.mode = m;
            }
            if let Some(m) = manifest {
                c.probe.manifest = Some(m);
            }
            if let Some(p) = checkpoint {
                c.probe.checkpoint = Some(p);
            }
            if let Some(e) = epochs {
                c.probe.config.epochs = e;
            }
            if c.probe.manifest.is_none() {
                usage_error(ErrorKind::MissingRequiredArgument, "probe needs a labeled manifest: pass --manifest or set [probe] manifest");
            }
            if c.probe.config.mode != ProbeMode::Supervised && c.probe.checkpoint.is_none() {
                usage_error(ErrorKind::MissingRequiredArgument, "frozen and finetune probes need --checkpoint");
            }
            let out = out_dir(&c);
            prepare_out(&out)?;
            commands::probe(&c, &out)?;
        }
        Command::Gradcheck => return commands::gradcheck(),
        Command::SynthData { pretrain, labeled, seconds, snr_db } => {
            if pretrain == 0 || labeled == 0 || seconds <= 0.0 {
                bail!("synth-data needs positive utterance counts and duration");
            }
            let out = out_dir(&c);
            prepare_out(&out)?;
            corpus::synth_data(&out, c.train.seed, pretrain, labeled, seconds, snr_db)?;
        }
        Command::Plotdata { run } => {
            let out = out_dir(&c);
            prepare_out(&out)?;
            commands::plotdata(&run, &out)?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
