//! `adlite kfold`: stratified k-fold cross-validation, one freshly seeded
//! model per fold, with a mean +/- population-standard-deviation summary
//! row over accuracy, precision, recall, F1, and AUC.

use std::path::Path;

use adlite_core::data::split::{kfold_split, stratified_split};
use adlite_core::graph::build_adlite;
use adlite_core::metrics::mean_std;
use adlite_core::optim::{evaluate, fit, AdamState};
use adlite_core::{Result, Rng, Scalar};
use serde::Serialize;

use crate::commands::report_from_eval;
use crate::commands::train::loss_config;
use crate::config::RunConfig;
use crate::dataio::{load_datasets, prepare_subset};
use crate::rundir::{write_confusion_csv, write_report};

const KFOLD_SPLIT_STREAM: u64 = 1 << 34;
const FOLD_STREAM_BASE: u64 = (1 << 34) + 1;

#[derive(Debug, Clone, Serialize)]
pub struct FoldRow {
    pub fold: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: Option<f64>,
    pub secs_per_epoch: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KfoldSummary {
    pub folds: Vec<FoldRow>,
    pub mean: FoldStats,
    pub std: FoldStats,
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldStats {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: f64,
}

/// Per-fold precision/recall/F1 are support-weighted averages; AUC is the
/// macro one-vs-rest value.
pub fn run<T: Scalar>(cfg: &RunConfig, out_dir: &Path) -> Result<KfoldSummary> {
    cfg.validate_for_training()?;
    let data = load_datasets(cfg)?;
    let model_cfg = cfg.model_config(Some(data.index.num_classes()))?;
    std::fs::create_dir_all(out_dir)?;

    let mut effective = cfg.clone();
    effective.num_classes = Some(model_cfg.num_classes);
    effective.out_dir = Some(out_dir.display().to_string());
    std::fs::write(out_dir.join("config.json"), effective.to_json_string())?;

    let root = Rng::new(cfg.seed);
    let mut split_rng = root.derive(KFOLD_SPLIT_STREAM);
    let folds = kfold_split(&data.index, cfg.kfold_k, &mut split_rng)?;

    let mut rows = Vec::with_capacity(folds.len());
    for (i, (train_pos, test_pos)) in folds.iter().enumerate() {
        let fold_seed = root.derive(FOLD_STREAM_BASE + i as u64).seed();
        let fold_rng = Rng::new(fold_seed);

        // Carve a validation subset out of the fold's training samples.
        let train_index = data.index.subset(train_pos)?;
        let mut val_rng = fold_rng.derive(1);
        let (tr_local, val_local) =
            stratified_split(&train_index, cfg.val_fraction, &mut val_rng)?;
        let tr_pos: Vec<usize> = tr_local.iter().map(|&l| train_pos[l]).collect();
        let val_pos: Vec<usize> = val_local.iter().map(|&l| train_pos[l]).collect();

        let train = prepare_subset::<T>(&data, &tr_pos, cfg.input_channels, cfg.input_size)?;
        let val = prepare_subset::<T>(&data, &val_pos, cfg.input_channels, cfg.input_size)?;
        let test = prepare_subset::<T>(&data, test_pos, cfg.input_channels, cfg.input_size)?;
        let loss = loss_config::<T>(cfg, &data, &tr_pos)?;

        let mut init_rng = fold_rng.derive(2);
        let mut graph = build_adlite::<T>(&model_cfg, &mut init_rng)?;
        let mut adam = AdamState::for_graph(&graph);
        let run = fit(
            &mut graph,
            &mut adam,
            &train,
            &val,
            &cfg.schedule(),
            cfg.epochs,
            cfg.batch_size,
            &loss,
            fold_seed,
        )?;
        let secs_per_epoch = if run.records.is_empty() {
            0.0
        } else {
            run.records.iter().map(|r| r.wall_seconds).sum::<f64>() / run.records.len() as f64
        };

        let eval = evaluate(&graph, &test, &loss, cfg.batch_size)?;
        let labels: Vec<usize> = test_pos
            .iter()
            .map(|&p| data.index.samples[p].class_id)
            .collect();
        let (cm, rep) = report_from_eval(&eval, &labels, &data.index.class_names)?;

        let fold_dir = out_dir.join(format!("fold-{:02}", i + 1));
        std::fs::create_dir_all(&fold_dir)?;
        write_report(&fold_dir, &rep)?;
        write_confusion_csv(&fold_dir.join("confusion.csv"), &cm, &data.index.class_names)?;

        let row = FoldRow {
            fold: i + 1,
            accuracy: rep.accuracy,
            precision: rep.weighted_precision,
            recall: rep.weighted_recall,
            f1: rep.weighted_f1,
            auc: rep.macro_auc,
            secs_per_epoch,
        };
        println!(
            "fold {:>2}: accuracy {:.3}  precision {:.3}  recall {:.3}  f1 {:.3}  auc {}",
            row.fold,
            row.accuracy,
            row.precision,
            row.recall,
            row.f1,
            row.auc.map_or("-".into(), |a| format!("{a:.3}")),
        );
        rows.push(row);
    }

    let summary = summarize(rows);
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| adlite_core::Error::Config(e.to_string()))?;
    std::fs::write(out_dir.join("summary.json"), json)?;
    std::fs::write(out_dir.join("summary.txt"), render_summary(&summary))?;
    println!(
        "mean +/- std: accuracy {:.3} +/- {:.3}  f1 {:.3} +/- {:.3}",
        summary.mean.accuracy, summary.std.accuracy, summary.mean.f1, summary.std.f1
    );
    Ok(summary)
}

/// Pure summary math over fold rows (exposed for direct use on published
/// fold tables).
pub fn summarize(folds: Vec<FoldRow>) -> KfoldSummary {
    let col = |get: fn(&FoldRow) -> f64| -> Vec<f64> { folds.iter().map(get).collect() };
    let (acc_m, acc_s) = mean_std(&col(|r| r.accuracy));
    let (p_m, p_s) = mean_std(&col(|r| r.precision));
    let (r_m, r_s) = mean_std(&col(|r| r.recall));
    let (f_m, f_s) = mean_std(&col(|r| r.f1));
    let aucs: Vec<f64> = folds.iter().filter_map(|r| r.auc).collect();
    let (a_m, a_s) = if aucs.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        mean_std(&aucs)
    };
    KfoldSummary {
        folds,
        mean: FoldStats {
            accuracy: acc_m,
            precision: p_m,
            recall: r_m,
            f1: f_m,
            auc: a_m,
        },
        std: FoldStats {
            accuracy: acc_s,
            precision: p_s,
            recall: r_s,
            f1: f_s,
            auc: a_s,
        },
    }
}

fn render_summary(s: &KfoldSummary) -> String {
    let mut out = String::new();
    out.push_str("fold   accuracy  precision  recall    f1        auc\n");
    for r in &s.folds {
        out.push_str(&format!(
            "{:<6} {:<9.3} {:<10.3} {:<9.3} {:<9.3} {}\n",
            r.fold,
            r.accuracy,
            r.precision,
            r.recall,
            r.f1,
            r.auc.map_or("-".into(), |a| format!("{a:.3}")),
        ));
    }
    out.push_str(&format!(
        "mean   {:<9.3} {:<10.3} {:<9.3} {:<9.3} {:.3}\n",
        s.mean.accuracy, s.mean.precision, s.mean.recall, s.mean.f1, s.mean.auc
    ));
    out.push_str(&format!(
        "std    {:<9.4} {:<10.4} {:<9.4} {:<9.4} {:.4}\n",
        s.std.accuracy, s.std.precision, s.std.recall, s.std.f1, s.std.auc
    ));
    out
}
