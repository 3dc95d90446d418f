//! Confusion-matrix classification metrics: accuracy, per-class
//! precision/recall/F1 with macro and support-weighted averages, and
//! one-vs-rest ROC AUC.
//!
//! Conventions: any 0/0 metric is defined as 0; the support-weighted recall
//! is computed from summed counts (sum TP / total), which makes the
//! weighted-recall == accuracy identity exact rather than approximate; AUC
//! ranks ties at half credit.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    /// counts[t * K + p] = samples with true class t predicted as p.
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        ConfusionMatrix {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn count(&self, true_class: usize, predicted: usize) -> u64 {
        self.counts[true_class * self.num_classes + predicted]
    }

    pub fn accumulate(&mut self, true_labels: &[usize], predicted: &[usize]) -> Result<()> {
        if true_labels.len() != predicted.len() {
            return Err(Error::Label(format!(
                "{} labels vs {} predictions",
                true_labels.len(),
                predicted.len()
            )));
        }
        for (&t, &p) in true_labels.iter().zip(predicted) {
            if t >= self.num_classes || p >= self.num_classes {
                return Err(Error::Label(format!(
                    "label pair ({t}, {p}) out of range for {} classes",
                    self.num_classes
                )));
            }
            self.counts[t * self.num_classes + p] += 1;
        }
        Ok(())
    }

    /// Merge another matrix accumulated over a disjoint batch.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes != self.num_classes {
            return Err(Error::Label("confusion matrix size mismatch".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        (0..self.num_classes).map(|p| self.count(class, p)).sum()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u64]> {
        self.counts.chunks(self.num_classes)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// One-vs-rest AUC; absent when probabilities were not supplied or the
    /// class had no positives or no negatives.
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassificationReport {
    pub class_names: Vec<String>,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub macro_auc: Option<f64>,
    /// Classes left out of the macro AUC for lack of positives or negatives.
    pub auc_excluded: Vec<String>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Build the report. `probabilities`, when given, is `(labels, probs)` with
/// `probs` in row-major (n, K) order and enables the AUC columns.
pub fn report(
    cm: &ConfusionMatrix,
    class_names: &[String],
    probabilities: Option<(&[usize], &[f64])>,
) -> Result<ClassificationReport> {
    let k = cm.num_classes();
    if class_names.len() != k {
        return Err(Error::Label(format!(
            "{} class names for {k} classes",
            class_names.len()
        )));
    }
    let total = cm.total();
    if total == 0 {
        return Err(Error::Label("empty confusion matrix".into()));
    }

    let (aucs, macro_auc, excluded) = match probabilities {
        Some((labels, probs)) => {
            let (per, mac, exc) = roc_auc_ovr(labels, probs, k)?;
            (per, mac, exc)
        }
        None => (vec![None; k], None, Vec::new()),
    };

    let mut per_class = Vec::with_capacity(k);
    let mut trace = 0u64;
    for c in 0..k {
        let tp = cm.count(c, c);
        trace += tp;
        let support = cm.support(c);
        let predicted: u64 = (0..k).map(|t| cm.count(t, c)).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, support);
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1: f1(precision, recall),
            support,
            auc: aucs[c],
        });
    }

    let kf = k as f64;
    let macro_precision = per_class.iter().map(|m| m.precision).sum::<f64>() / kf;
    let macro_recall = per_class.iter().map(|m| m.recall).sum::<f64>() / kf;
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / kf;
    let weighted = |get: fn(&ClassMetrics) -> f64| {
        per_class
            .iter()
            .map(|m| m.support as f64 * get(m))
            .sum::<f64>()
            / total as f64
    };
    let weighted_precision = weighted(|m| m.precision);
    let weighted_f1 = weighted(|m| m.f1);
    // Support-weighted recall reduces to trace/total (each class contributes
    // support * tp/support = tp), so compute it that way and keep the
    // identity with accuracy exact.
    let accuracy = trace as f64 / total as f64;
    let weighted_recall = accuracy;

    Ok(ClassificationReport {
        class_names: class_names.to_vec(),
        per_class,
        accuracy,
        macro_precision,
        macro_recall,
        macro_f1,
        weighted_precision,
        weighted_recall,
        weighted_f1,
        macro_auc,
        auc_excluded: excluded.into_iter().map(|c| class_names[c].clone()).collect(),
    })
}

/// One-vs-rest AUC per class from predicted class probabilities, via the
/// rank statistic (equivalent to counting correctly ordered positive /
/// negative pairs with ties scored 0.5). Classes without both a positive
/// and a negative sample are excluded from the macro average.
pub fn roc_auc_ovr(
    labels: &[usize],
    probs: &[f64],
    num_classes: usize,
) -> Result<(Vec<Option<f64>>, Option<f64>, Vec<usize>)> {
    let n = labels.len();
    if n == 0 || probs.len() != n * num_classes {
        return Err(Error::Label(format!(
            "probability matrix of {} entries does not match {n} samples x {num_classes} classes",
            probs.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::Label(format!(
            "label {bad} out of range for {num_classes} classes"
        )));
    }

    let mut per = vec![None; num_classes];
    let mut excluded = Vec::new();
    let mut macro_sum = 0.0;
    let mut macro_n = 0usize;
    let mut order: Vec<usize> = Vec::with_capacity(n);
    for c in 0..num_classes {
        let n_pos = labels.iter().filter(|&&l| l == c).count();
        let n_neg = n - n_pos;
        if n_pos == 0 || n_neg == 0 {
            excluded.push(c);
            continue;
        }
        order.clear();
        order.extend(0..n);
        order.sort_by(|&a, &b| {
            probs[a * num_classes + c]
                .partial_cmp(&probs[b * num_classes + c])
                .expect("finite scores")
        });
        // Average ranks over tied scores, then the Mann-Whitney identity:
        // AUC = (R_pos - n_pos (n_pos + 1) / 2) / (n_pos * n_neg).
        let mut rank_pos_sum = 0.0f64;
        let mut i = 0;
        while i < n {
            let mut j = i;
            let score = probs[order[i] * num_classes + c];
            while j < n && probs[order[j] * num_classes + c] == score {
                j += 1;
            }
            let avg_rank = (i + 1 + j) as f64 / 2.0; // mean of ranks i+1 ..= j
            for &s in &order[i..j] {
                if labels[s] == c {
                    rank_pos_sum += avg_rank;
                }
            }
            i = j;
        }
        let auc = (rank_pos_sum - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos * n_neg) as f64;
        per[c] = Some(auc);
        macro_sum += auc;
        macro_n += 1;
    }
    let macro_auc = if macro_n > 0 {
        Some(macro_sum / macro_n as f64)
    } else {
        None
    };
    Ok((per, macro_auc, excluded))
}

/// Mean and population standard deviation, as used for the k-fold summary
/// row.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Aligned text rendering, values rounded to 3 decimals.
pub fn render_report(report: &ClassificationReport) -> String {
    let name_w = report
        .class_names
        .iter()
        .map(|n| n.len())
        .chain(["weighted avg".len()].into_iter())
        .max()
        .unwrap_or(8);
    let mut out = String::new();
    out.push_str(&format!(
        "{:<name_w$}  {:>9}  {:>9}  {:>9}  {:>9}  {:>9}\n",
        "class", "precision", "recall", "f1", "support", "auc"
    ));
    for (name, m) in report.class_names.iter().zip(&report.per_class) {
        out.push_str(&format!(
            "{:<name_w$}  {:>9.3}  {:>9.3}  {:>9.3}  {:>9}  {:>9}\n",
            name,
            m.precision,
            m.recall,
            m.f1,
            m.support,
            m.auc.map_or("-".to_string(), |a| format!("{a:.3}")),
        ));
    }
    out.push_str(&format!(
        "{:<name_w$}  {:>9.3}  {:>9.3}  {:>9.3}\n",
        "macro avg", report.macro_precision, report.macro_recall, report.macro_f1
    ));
    out.push_str(&format!(
        "{:<name_w$}  {:>9.3}  {:>9.3}  {:>9.3}\n",
        "weighted avg", report.weighted_precision, report.weighted_recall, report.weighted_f1
    ));
    out.push_str(&format!("accuracy: {:.3}\n", report.accuracy));
    if let Some(auc) = report.macro_auc {
        out.push_str(&format!("macro ovr auc: {auc:.3}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("class{i}")).collect()
    }

    #[test]
    fn perfect_predictions_fill_the_diagonal() {
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&[0, 1, 2, 1], &[0, 1, 2, 1]).unwrap();
        for t in 0..3 {
            for p in 0..3 {
                assert_eq!(cm.count(t, p), if t == p { [1, 2, 1][t] } else { 0 });
            }
        }
        let r = report(&cm, &names(3), None).unwrap();
        assert_eq!(r.accuracy, 1.0);
        for m in &r.per_class {
            assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn collapsed_predictions_fill_one_column() {
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&[0, 1, 2], &[0, 0, 0]).unwrap();
        for t in 0..3 {
            assert_eq!(cm.count(t, 0), 1);
            assert_eq!(cm.count(t, 1), 0);
            assert_eq!(cm.count(t, 2), 0);
        }
    }

    #[test]
    fn accumulation_is_additive_over_batches() {
        let t = [0usize, 1, 0, 2, 1, 1];
        let p = [0usize, 1, 1, 2, 0, 1];
        let mut whole = ConfusionMatrix::new(3);
        whole.accumulate(&t, &p).unwrap();
        let mut parts = ConfusionMatrix::new(3);
        parts.accumulate(&t[..3], &p[..3]).unwrap();
        let mut second = ConfusionMatrix::new(3);
        second.accumulate(&t[3..], &p[3..]).unwrap();
        parts.merge(&second).unwrap();
        assert_eq!(whole, parts);
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let mut cm = ConfusionMatrix::new(2);
        assert!(matches!(
            cm.accumulate(&[2], &[0]),
            Err(Error::Label(_))
        ));
    }

    #[test]
    fn two_class_hand_computed_matrix() {
        // [[8, 2], [3, 7]]: precision_0 = 8/11, recall_0 = 0.8,
        // f1_0 = 2 * (8/11) * 0.8 / (8/11 + 0.8)
        let mut cm = ConfusionMatrix::new(2);
        for (t, p, n) in [(0, 0, 8), (0, 1, 2), (1, 0, 3), (1, 1, 7)] {
            cm.accumulate(&vec![t; n], &vec![p; n]).unwrap();
        }
        let r = report(&cm, &names(2), None).unwrap();
        assert!((r.per_class[0].precision - 8.0 / 11.0).abs() < 1e-12);
        assert!((r.per_class[0].recall - 0.8).abs() < 1e-12);
        assert!((r.per_class[0].f1 - 0.761_904_761_904_761_9).abs() < 1e-12);
        assert!((r.accuracy - 0.75).abs() < 1e-12);
    }

    #[test]
    fn macro_precision_of_published_per_class_column() {
        // Per-class precisions (1.00, 0.99, 1.00, 0.97) must average to 0.99.
        let mut cm = ConfusionMatrix::new(4);
        // Diagonal tp counts with false positives shaped to hit the
        // precisions exactly: tp/(tp+fp) = 1, 99/100, 1, 97/100.
        for (t, p, n) in [
            (0usize, 0usize, 50usize),
            (1, 1, 99),
            (0, 1, 1),
            (2, 2, 80),
            (3, 3, 97),
            (0, 3, 3),
        ] {
            cm.accumulate(&vec![t; n], &vec![p; n]).unwrap();
        }
        let r = report(&cm, &names(4), None).unwrap();
        assert!((r.per_class[0].precision - 1.0).abs() < 1e-12);
        assert!((r.per_class[1].precision - 0.99).abs() < 1e-12);
        assert!((r.per_class[2].precision - 1.0).abs() < 1e-12);
        assert!((r.per_class[3].precision - 0.97).abs() < 1e-12);
        assert!((r.macro_precision - 0.99).abs() < 1e-12);
    }

    #[test]
    fn weighted_recall_equals_accuracy_exactly() {
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(
            &[0, 0, 0, 1, 1, 2, 2, 2, 2, 2, 2, 2],
            &[0, 1, 0, 1, 2, 2, 2, 0, 2, 2, 1, 2],
        )
        .unwrap();
        let r = report(&cm, &names(3), None).unwrap();
        assert_eq!(r.weighted_recall, r.accuracy);
        // Micro recall = sum tp / sum support = trace / total = accuracy.
        let micro = (0..3).map(|c| cm.count(c, c)).sum::<u64>() as f64 / cm.total() as f64;
        assert_eq!(micro, r.accuracy);
    }

    #[test]
    fn permuting_classes_permutes_per_class_and_keeps_aggregates() {
        let t = [0usize, 1, 2, 0, 2, 1, 0, 2];
        let p = [0usize, 2, 2, 1, 0, 1, 0, 2];
        let mut cm = ConfusionMatrix::new(3);
        cm.accumulate(&t, &p).unwrap();
        let r = report(&cm, &names(3), None).unwrap();

        let perm = [2usize, 0, 1];
        let tp: Vec<usize> = t.iter().map(|&v| perm[v]).collect();
        let pp: Vec<usize> = p.iter().map(|&v| perm[v]).collect();
        let mut cm2 = ConfusionMatrix::new(3);
        cm2.accumulate(&tp, &pp).unwrap();
        let r2 = report(&cm2, &names(3), None).unwrap();

        for c in 0..3 {
            assert_eq!(r.per_class[c].precision, r2.per_class[perm[c]].precision);
            assert_eq!(r.per_class[c].recall, r2.per_class[perm[c]].recall);
        }
        assert_eq!(r.accuracy, r2.accuracy);
        assert!((r.macro_f1 - r2.macro_f1).abs() < 1e-12);
        assert!((r.weighted_f1 - r2.weighted_f1).abs() < 1e-12);
    }

    #[test]
    fn zero_division_convention_is_zero() {
        // Class 1 never predicted and never present.
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&[0, 0], &[0, 0]).unwrap();
        let r = report(&cm, &names(2), None).unwrap();
        assert_eq!(r.per_class[1].precision, 0.0);
        assert_eq!(r.per_class[1].recall, 0.0);
        assert_eq!(r.per_class[1].f1, 0.0);
    }

    #[test]
    fn auc_at_the_extremes() {
        // Perfectly separating scores.
        let labels = [1usize, 1, 0, 0];
        let probs = [0.2, 0.8, 0.3, 0.7, 0.9, 0.1, 0.6, 0.4];
        let (per, _, _) = roc_auc_ovr(&labels, &probs, 2).unwrap();
        assert_eq!(per[1], Some(1.0));
        assert_eq!(per[0], Some(1.0));

        // Identical scores: every pair ties at half credit.
        let probs_tied = [0.5; 8];
        let (per, mac, _) = roc_auc_ovr(&labels, &probs_tied, 2).unwrap();
        assert_eq!(per[0], Some(0.5));
        assert_eq!(per[1], Some(0.5));
        assert_eq!(mac, Some(0.5));
    }

    #[test]
    fn auc_matches_pair_counting_oracle_exactly() {
        let mut rng = crate::rng::Rng::new(77);
        for trial in 0..30 {
            let n = 20;
            let k = 3;
            let labels: Vec<usize> = (0..n).map(|_| rng.below(k)).collect();
            // Quantized scores force plenty of ties.
            let mut probs = vec![0.0f64; n * k];
            for p in probs.iter_mut() {
                *p = (rng.below(6) as f64) / 5.0;
            }
            let (per, _, _) = roc_auc_ovr(&labels, &probs, k).unwrap();
            for c in 0..k {
                let mut wins = 0.0f64;
                let mut pairs = 0.0f64;
                for i in 0..n {
                    if labels[i] != c {
                        continue;
                    }
                    for j in 0..n {
                        if labels[j] == c {
                            continue;
                        }
                        pairs += 1.0;
                        let (si, sj) = (probs[i * k + c], probs[j * k + c]);
                        if si > sj {
                            wins += 1.0;
                        } else if si == sj {
                            wins += 0.5;
                        }
                    }
                }
                let expect = if pairs == 0.0 { None } else { Some(wins / pairs) };
                assert_eq!(per[c], expect, "trial {trial} class {c}");
            }
        }
    }

    #[test]
    fn auc_is_invariant_under_monotone_transforms() {
        let mut rng = crate::rng::Rng::new(78);
        let n = 25;
        let labels: Vec<usize> = (0..n).map(|_| rng.below(2)).collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        let probs: Vec<f64> = scores.iter().flat_map(|&s| [1.0 - s, s]).collect();
        let (per, _, _) = roc_auc_ovr(&labels, &probs, 2).unwrap();
        // exp is strictly monotone.
        let probs2: Vec<f64> = scores.iter().flat_map(|&s| [(-s).exp(), s.exp()]).collect();
        let (per2, _, _) = roc_auc_ovr(&labels, &probs2, 2).unwrap();
        assert_eq!(per[1], per2[1]);
    }

    #[test]
    fn degenerate_classes_are_excluded_from_macro_auc() {
        let labels = [0usize, 0, 1, 1];
        let probs = [0.9, 0.05, 0.05, 0.8, 0.1, 0.1, 0.3, 0.6, 0.1, 0.2, 0.7, 0.1];
        let (per, mac, excluded) = roc_auc_ovr(&labels, &probs, 3).unwrap();
        assert_eq!(per[2], None);
        assert_eq!(excluded, vec![2]);
        assert!(mac.is_some());
    }

    #[test]
    fn summary_math_on_published_fold_accuracies() {
        let vals = [0.995, 0.984, 0.992, 0.991, 0.983, 0.992, 0.994, 0.988, 0.997, 0.985];
        let (mean, std) = mean_std(&vals);
        assert!((mean - 0.9901).abs() < 1e-12);
        assert!((std - 0.004614108798023735).abs() < 1e-12);
    }
}
