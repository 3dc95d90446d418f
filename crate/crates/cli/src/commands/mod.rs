pub mod audit;
pub mod eval;
pub mod kfold;
pub mod synth;
pub mod train;
pub mod txpreview;

use adlite_core::metrics::{report, ClassificationReport, ConfusionMatrix};
use adlite_core::optim::EvalResult;
use adlite_core::Result;

/// Confusion matrix plus full report (with AUC) from an evaluation pass.
pub fn report_from_eval(
    eval: &EvalResult,
    true_labels: &[usize],
    class_names: &[String],
) -> Result<(ConfusionMatrix, ClassificationReport)> {
    let mut cm = ConfusionMatrix::new(class_names.len());
    cm.accumulate(true_labels, &eval.predictions)?;
    let rep = report(
        &cm,
        class_names,
        Some((true_labels, &eval.probabilities)),
    )?;
    Ok((cm, rep))
}
