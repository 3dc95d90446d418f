//! Run-directory artifacts: the epoch log, reports, the confusion matrix,
//! and the split manifest. Every run directory is self-describing: the
//! stored test report can be reproduced from the directory's own contents.

use std::io::Write;
use std::path::Path;

use adlite_core::metrics::{render_report, ClassificationReport, ConfusionMatrix};
use adlite_core::optim::TrainRun;
use adlite_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize, Deserialize)]
struct EpochLine {
    epoch: u32,
    lr: f64,
    train_loss: f64,
    train_acc: f64,
    val_loss: f64,
    val_acc: f64,
    seconds: f64,
}

pub fn write_epoch_log(path: &Path, run: &TrainRun) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    for r in &run.records {
        let line = EpochLine {
            epoch: r.epoch,
            lr: r.lr,
            train_loss: r.train_loss,
            train_acc: r.train_acc,
            val_loss: r.val_loss,
            val_acc: r.val_acc,
            seconds: r.wall_seconds,
        };
        let json = serde_json::to_string(&line).map_err(|e| Error::Config(e.to_string()))?;
        writeln!(out, "{json}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn subset(&self, which: &str) -> Result<&[usize]> {
        match which {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::Config(format!(
                "unknown split \"{other}\" (expected train, val, or test)"
            ))),
        }
    }
}

pub fn write_report(dir: &Path, report: &ClassificationReport) -> Result<()> {
    std::fs::write(dir.join("report.txt"), render_report(report))?;
    let json =
        serde_json::to_string_pretty(report).map_err(|e| Error::Config(e.to_string()))?;
    std::fs::write(dir.join("report.json"), json)?;
    Ok(())
}

pub fn write_confusion_csv(path: &Path, cm: &ConfusionMatrix, class_names: &[String]) -> Result<()> {
    let mut out = String::new();
    out.push_str("true\\predicted");
    for name in class_names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (t, row) in cm.rows().enumerate() {
        out.push_str(&class_names[t]);
        for v in row {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
