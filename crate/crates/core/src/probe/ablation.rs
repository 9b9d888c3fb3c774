use std::path::Path;

use super::{ablation_report, LabeledUtterance, ProbeConfig, ProbeModel};
use crate::error::Result;
use crate::trainer::{TrainConfig, Trainer, TrainingSet};
use crate::workers::{WorkerName, Workers};

/// One self-supervised run followed by a probe.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRun {
    /// `None` for the all-workers model.
    pub dropped: Option<WorkerName>,
    pub accuracy: f64,
    /// The dropped head's checksum is the same after training as at init.
    pub head_untouched: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationStudy {
    pub runs: Vec<AblationRun>,
}

impl AblationStudy {
    pub fn all(&self) -> Option<f64> {
        self.runs.iter().find(|r| r.dropped.is_none()).map(|r| r.accuracy)
    }

    pub fn report(&self) -> Result<String> {
        let all = self.all().ok_or_else(|| crate::error::invalid!("ablation study lacks the all-workers run"))?;
        let dropped: Vec<(WorkerName, f64)> = self.runs.iter().filter_map(|r| r.dropped.map(|w| (w, r.accuracy))).collect();
        ablation_report(all, &dropped)
    }
}

/// Trains `config` once with every worker and once without each of
/// `drops`, probes each encoder with `probe` on `train` and scores it on
/// `test`. Run directories go under `out` as `all/` and `drop-<WORKER>/`.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    config: &TrainConfig,
    drops: &[WorkerName],
    set: &TrainingSet,
    probe: &ProbeConfig,
    train: &[LabeledUtterance],
    test: &[LabeledUtterance],
    out: Option<&Path>,
    mut log: impl FnMut(&AblationRun),
) -> Result<AblationStudy> {
    let stats = set.stats()?;
    let mut runs = Vec::new();
    for dropped in std::iter::once(None).chain(drops.iter().copied().map(Some)) {
        let (cfg, dir) = match dropped {
            None => (config.clone(), "all".to_string()),
            Some(w) => (config.without(w)?, format!("drop-{w}")),
        };
        let mut t = Trainer::new(cfg, stats.clone())?;
        t.tag = dropped.map(|w| format!("without {w}"));
        let head = dropped.map(|w| t.store.checksum(&format!("{}.", Workers::prefix(w))));
        let dir = out.map(|o| o.join(dir));
        t.train(set, dir.as_deref(), |_| {})?;
        let head_untouched = match (dropped, head) {
            (Some(w), Some(h)) => t.store.checksum(&format!("{}.", Workers::prefix(w))) == h,
            _ => true,
        };
        let mut m = ProbeModel::new(probe.clone(), Some((&t.model.encoder, &t.store)), &config.encoder)?;
        m.fit(train)?;
        let run = AblationRun { dropped, accuracy: m.evaluate(test)?.utterance_accuracy, head_untouched };
        log(&run);
        runs.push(run);
    }
    Ok(AblationStudy { runs })
}
