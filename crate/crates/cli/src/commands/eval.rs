//! `adlite eval`: inference-mode evaluation of a checkpoint on a dataset
//! (optionally one partition from a stored split manifest).

use std::path::Path;

use adlite_core::optim::evaluate;
use adlite_core::{Error, Result, Scalar};

use crate::commands::report_from_eval;
use crate::config::RunConfig;
use crate::dataio::{load_datasets, prepare_subset};
use crate::rundir::{write_confusion_csv, write_report, SplitManifest};
use crate::{checkpoint, CliReport};

pub struct EvalOpts {
    pub checkpoint: std::path::PathBuf,
    /// Overrides for the data source; empty means "the checkpoint's own".
    pub data_paths: Vec<String>,
    pub data_names: Vec<String>,
    pub format: Option<String>,
    pub classmap: Option<String>,
    pub manifest: Option<std::path::PathBuf>,
    pub split: String,
}

pub fn run<T: Scalar>(opts: &EvalOpts, out_dir: &Path) -> Result<CliReport> {
    let loaded = checkpoint::load::<T>(&opts.checkpoint)?;
    let mut data_cfg: RunConfig = loaded.config.clone();
    if !opts.data_paths.is_empty() {
        data_cfg.data_paths = opts.data_paths.clone();
    }
    if !opts.data_names.is_empty() {
        data_cfg.data_names = opts.data_names.clone();
    }
    if let Some(f) = &opts.format {
        data_cfg.data_format = f.clone();
    }
    if let Some(m) = &opts.classmap {
        data_cfg.classmap = Some(m.clone());
    }

    let data = load_datasets(&data_cfg)?;
    let model_classes = loaded.graph.cfg.num_classes;
    if data.index.num_classes() != model_classes {
        return Err(Error::Config(format!(
            "checkpoint expects {model_classes} classes but the dataset has {}",
            data.index.num_classes()
        )));
    }

    let positions: Vec<usize> = match &opts.manifest {
        Some(path) => SplitManifest::load(path)?.subset(&opts.split)?.to_vec(),
        None => (0..data.index.len()).collect(),
    };
    let prepared = prepare_subset::<T>(
        &data,
        &positions,
        data_cfg.input_channels,
        data_cfg.input_size,
    )?;

    // The loss weighting does not change predictions or the report.
    let eval = evaluate(&loaded.graph, &prepared, &Default::default(), data_cfg.batch_size)?;
    let labels: Vec<usize> = positions
        .iter()
        .map(|&p| data.index.samples[p].class_id)
        .collect();
    let (cm, rep) = report_from_eval(&eval, &labels, &data.index.class_names)?;

    std::fs::create_dir_all(out_dir)?;
    write_report(out_dir, &rep)?;
    write_confusion_csv(&out_dir.join("confusion.csv"), &cm, &data.index.class_names)?;
    println!(
        "evaluated {} samples: accuracy {:.4}, macro F1 {:.4}",
        positions.len(),
        rep.accuracy,
        rep.macro_f1
    );
    Ok(CliReport {
        accuracy: rep.accuracy,
        macro_f1: rep.macro_f1,
    })
}
