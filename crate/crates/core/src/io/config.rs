use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;

use crate::error::{Error, Result};
use crate::probe::{ProbeConfig, ProbeMode};
use crate::trainer::TrainConfig;
use crate::workers::{WorkerConfig, WorkerName};
use crate::encoder::EncoderConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelSize {
    Full,
    Desk,
}

impl FromStr for ModelSize {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full" => Ok(ModelSize::Full),
            "desk" => Ok(ModelSize::Desk),
            _ => Err(format!("unknown model size `{s}` (expected full or desk)")),
        }
    }
}

/// Probe inputs that live next to the probe hyper-parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProbeSettings {
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub config: ProbeConfig,
}

/// Everything a run needs, read from `key = value` lines under `[run]`,
/// `[train]` and `[probe]`. Unknown sections and keys are errors.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub valid_manifest: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub model: ModelSize,
    pub train: TrainConfig,
    pub probe: ProbeSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: None,
            valid_manifest: None,
            out: None,
            model: ModelSize::Full,
            train: TrainConfig::default(),
            probe: ProbeSettings::default(),
        }
    }
}

fn parse<T: FromStr>(section: &str, key: &str, v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("[{section}] {key} = {v}: {e}"))
}

fn path_or_none(base: &Path, v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| base.join(v))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base).map_err(|m| Error::format(path, m))
    }

    /// Relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> std::result::Result<Self, String> {
        let ini = Ini::load_from_str(text).map_err(|e| e.to_string())?;
        let mut c = RunConfig::default();
        let mut model = None;
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("");
            for (key, v) in props.iter() {
                let v = v.trim();
                match (section, key) {
                    ("run", "manifest") => c.manifest = path_or_none(base, v),
                    ("run", "valid_manifest") => c.valid_manifest = path_or_none(base, v),
                    ("run", "out") => c.out = path_or_none(base, v),
                    ("run", "model") => model = Some(parse::<ModelSize>(section, key, v)?),
                    ("train", "learning_rate") => c.train.learning_rate = parse(section, key, v)?,
                    ("train", "halving_period_epochs") => c.train.halving_period_epochs = parse(section, key, v)?,
                    ("train", "epochs") => c.train.epochs = parse(section, key, v)?,
                    ("train", "batch_size_chunks") => c.train.batch_size_chunks = parse(section, key, v)?,
                    ("train", "chunk_samples") => c.train.chunk_samples = parse(section, key, v)?,
                    ("train", "seed") => c.train.seed = parse(section, key, v)?,
                    ("train", "workers") => {
                        c.train.enabled_workers = v
                            .split(',')
                            .filter(|s| !s.trim().is_empty())
                            .map(|s| s.parse::<WorkerName>().map_err(|e| e.to_string()))
                            .collect::<std::result::Result<_, _>>()?
                    }
                    ("probe", "manifest") => c.probe.manifest = path_or_none(base, v),
                    ("probe", "checkpoint") => c.probe.checkpoint = path_or_none(base, v),
                    ("probe", "mode") => c.probe.config.mode = parse::<ProbeMode>(section, key, v)?,
                    ("probe", "num_classes") => c.probe.config.num_classes = parse(section, key, v)?,
                    ("probe", "hidden") => c.probe.config.hidden = parse(section, key, v)?,
                    ("probe", "epochs") => c.probe.config.epochs = parse(section, key, v)?,
                    ("probe", "learning_rate") => c.probe.config.learning_rate = parse(section, key, v)?,
                    ("probe", "batch_frames") => c.probe.config.batch_frames = parse(section, key, v)?,
                    ("probe", "seed") => c.probe.config.seed = parse(section, key, v)?,
                    ("", k) => return Err(format!("key `{k}` outside a section")),
                    (s, k) => return Err(format!("unknown key `{k}` in section [{s}]")),
                }
            }
        }
        if let Some(m) = model {
            c.set_model(m);
        }
        c.train.validate().map_err(|e| e.to_string())?;
        Ok(c)
    }

    pub fn set_model(&mut self, m: ModelSize) {
        self.model = m;
        let (e, w) = match m {
            ModelSize::Full => (EncoderConfig::full(), WorkerConfig::full()),
            ModelSize::Desk => (EncoderConfig::desk(), WorkerConfig::desk()),
        };
        self.train.encoder = e;
        self.train.workers = w;
    }

    /// Canonical text form, parseable by [`RunConfig::parse`] with paths
    /// written as given.
    pub fn to_text(&self) -> String {
        let p = |x: &Option<PathBuf>| x.as_ref().map(|p| p.to_string_lossy().into_owned()).unwrap_or_default();
        let t = &self.train;
        let q = &self.probe.config;
        let mut s = String::new();
        let model = match self.model {
            ModelSize::Full => "full",
            ModelSize::Desk => "desk",
        };
        writeln!(s, "[run]\nmanifest = {}\nvalid_manifest = {}\nout = {}\nmodel = {model}\n", p(&self.manifest), p(&self.valid_manifest), p(&self.out)).unwrap();
        let workers: Vec<&str> = t.enabled().iter().map(|w| w.as_str()).collect();
        writeln!(
            s,
            "[train]\nlearning_rate = {}\nhalving_period_epochs = {}\nepochs = {}\nbatch_size_chunks = {}\nchunk_samples = {}\nworkers = {}\nseed = {}\n",
            t.learning_rate,
            t.halving_period_epochs,
            t.epochs,
            t.batch_size_chunks,
            t.chunk_samples,
            workers.join(","),
            t.seed
        )
        .unwrap();
        write!(
            s,
            "[probe]\nmanifest = {}\ncheckpoint = {}\nmode = {}\nnum_classes = {}\nhidden = {}\nepochs = {}\nlearning_rate = {}\nbatch_frames = {}\nseed = {}\n",
            p(&self.probe.manifest),
            p(&self.probe.checkpoint),
            q.mode,
            q.num_classes,
            q.hidden,
            q.epochs,
            q.learning_rate,
            q.batch_frames,
            q.seed
        )
        .unwrap();
        s
    }
}
