//! `adlite train`: split, build, fit, evaluate, persist.
//!
//! The run directory ends up with: `config.json` (the effective merged
//! configuration), `splits.json` (sample positions of every partition),
//! `epochs.jsonl` (one record per epoch), `model.adlt` (final parameters,
//! optimizer state, running statistics), `report.txt` / `report.json` and
//! `confusion.csv` for the held-out test set.

use std::path::{Path, PathBuf};

use adlite_core::data::split::stratified_split;
use adlite_core::graph::build_adlite;
use adlite_core::optim::{evaluate, fit, inverse_frequency_weights, AdamState, LossCfg};
use adlite_core::{Result, Rng, Scalar};

use crate::commands::report_from_eval;
use crate::config::RunConfig;
use crate::dataio::{load_datasets, prepare_subset, LoadedData};
use crate::rundir::{write_confusion_csv, write_epoch_log, write_report, SplitManifest};
use crate::{checkpoint, CliReport};

// Child-stream tags for the run seed; epoch shuffles use streams 1..=epochs
// inside `fit`, so structural streams live far away.
const SPLIT_STREAM: u64 = 1 << 33;
const INIT_STREAM: u64 = (1 << 33) + 1;

pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub report: CliReport,
}

/// Map positions of a nested split back to positions in the parent list.
fn lift(parent: &[usize], local: &[usize]) -> Vec<usize> {
    local.iter().map(|&l| parent[l]).collect()
}

pub fn make_splits(data: &LoadedData, cfg: &RunConfig) -> Result<SplitManifest> {
    let root = Rng::new(cfg.seed);
    let mut split_rng = root.derive(SPLIT_STREAM);
    let (trainval, test) = stratified_split(&data.index, cfg.test_fraction, &mut split_rng)?;
    let trainval_index = data.index.subset(&trainval)?;
    let (train_local, val_local) =
        stratified_split(&trainval_index, cfg.val_fraction, &mut split_rng)?;
    Ok(SplitManifest {
        seed: cfg.seed,
        train: lift(&trainval, &train_local),
        val: lift(&trainval, &val_local),
        test,
    })
}

pub fn loss_config<T: Scalar>(
    cfg: &RunConfig,
    data: &LoadedData,
    train_positions: &[usize],
) -> Result<LossCfg<T>> {
    if cfg.loss != "wcce" {
        return Ok(LossCfg::default());
    }
    let counts = data.index.subset(train_positions)?.per_class_counts();
    Ok(LossCfg {
        class_weights: Some(inverse_frequency_weights(&counts)?),
    })
}

pub fn run<T: Scalar>(cfg: &RunConfig, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate_for_training()?;
    let data = load_datasets(cfg)?;
    let model_cfg = cfg.model_config(Some(data.index.num_classes()))?;

    let mut effective = cfg.clone();
    effective.num_classes = Some(model_cfg.num_classes);
    effective.out_dir = Some(out_dir.display().to_string());

    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.json"), effective.to_json_string())?;

    let splits = make_splits(&data, cfg)?;
    splits.save(&out_dir.join("splits.json"))?;

    let train = prepare_subset::<T>(&data, &splits.train, cfg.input_channels, cfg.input_size)?;
    let val = prepare_subset::<T>(&data, &splits.val, cfg.input_channels, cfg.input_size)?;
    let test = prepare_subset::<T>(&data, &splits.test, cfg.input_channels, cfg.input_size)?;
    let loss = loss_config::<T>(cfg, &data, &splits.train)?;

    let root = Rng::new(cfg.seed);
    let mut init_rng = root.derive(INIT_STREAM);
    let mut graph = build_adlite::<T>(&model_cfg, &mut init_rng)?;
    let mut adam = AdamState::for_graph(&graph);

    println!(
        "training on {} samples ({} validation, {} test), {} epochs",
        train.len(),
        val.len(),
        test.len(),
        cfg.epochs
    );
    let run = fit(
        &mut graph,
        &mut adam,
        &train,
        &val,
        &cfg.schedule(),
        cfg.epochs,
        cfg.batch_size,
        &loss,
        cfg.seed,
    )?;
    for r in &run.records {
        println!(
            "epoch {:>3}: lr {:.6}  train loss {:.4} acc {:.3}  val loss {:.4} acc {:.3}  ({:.1}s)",
            r.epoch, r.lr, r.train_loss, r.train_acc, r.val_loss, r.val_acc, r.wall_seconds
        );
    }
    write_epoch_log(&out_dir.join("epochs.jsonl"), &run)?;

    checkpoint::save(&out_dir.join("model.adlt"), &effective, &graph, Some(&adam))?;

    let eval = evaluate(&graph, &test, &loss, cfg.batch_size)?;
    let test_labels: Vec<usize> = splits
        .test
        .iter()
        .map(|&p| data.index.samples[p].class_id)
        .collect();
    let (cm, rep) = report_from_eval(&eval, &test_labels, &data.index.class_names)?;
    write_report(out_dir, &rep)?;
    write_confusion_csv(&out_dir.join("confusion.csv"), &cm, &data.index.class_names)?;
    println!("test accuracy {:.4} (loss {:.4})", rep.accuracy, eval.loss);

    Ok(TrainOutcome {
        run_dir: out_dir.to_path_buf(),
        report: CliReport {
            accuracy: rep.accuracy,
            macro_f1: rep.macro_f1,
        },
    })
}
