//! Known-class accuracy, unknown-rejection AUROC and openness.
//!
//! Score convention: larger score = more likely unknown. The min-distance
//! rejection score from [`crate::caloss`] already follows it.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// SNR key for per-SNR grouping; SNRs are stored in tenths of a dB so the
/// map is ordered and hashable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SnrKey(pub i32);

impl SnrKey {
    pub fn from_db(db: f64) -> Self {
        SnrKey((db * 10.0).round() as i32)
    }

    pub fn db(self) -> f64 {
        self.0 as f64 / 10.0
    }
}

impl std::fmt::Display for SnrKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.db())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub overall_accuracy: f64,
    /// Only SNRs that have at least one sample appear.
    pub per_snr_accuracy: BTreeMap<SnrKey, f64>,
    /// `confusion[true][pred]`.
    pub confusion: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
    pub auroc: Option<f64>,
    pub openness: Option<f64>,
    pub n_known: usize,
    pub n_unknown: usize,
}

impl EvaluationReport {
    pub fn confusion_trace_accuracy(&self) -> f64 {
        let total: u64 = self.confusion.iter().flatten().sum();
        let diag: u64 = (0..self.confusion.len()).map(|i| self.confusion[i][i]).sum();
        if total == 0 {
            0.0
        } else {
            diag as f64 / total as f64
        }
    }

    /// Long-format CSV rows `(metric, group, value)`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,group,value\n");
        let _ = writeln!(out, "accuracy,all,{:.6}", self.overall_accuracy);
        for (snr, acc) in &self.per_snr_accuracy {
            let _ = writeln!(out, "accuracy,snr={snr},{acc:.6}");
        }
        if let Some(a) = self.auroc {
            let _ = writeln!(out, "auroc,all,{a:.6}");
        }
        if let Some(o) = self.openness {
            let _ = writeln!(out, "openness,all,{o:.6}");
        }
        let _ = writeln!(out, "count,known,{}", self.n_known);
        let _ = writeln!(out, "count,unknown,{}", self.n_unknown);
        out
    }

    /// Confusion matrix as a CSV grid with a header row of predicted labels.
    pub fn confusion_csv(&self) -> String {
        let names: Vec<String> = if self.class_names.len() == self.confusion.len() {
            self.class_names.clone()
        } else {
            (0..self.confusion.len()).map(|i| i.to_string()).collect()
        };
        let mut out = String::from("true\\pred");
        for n in &names {
            let _ = write!(out, ",{n}");
        }
        out.push('\n');
        for (n, row) in names.iter().zip(&self.confusion) {
            out.push_str(n);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Accuracy fields of an [`EvaluationReport`] over known-labeled samples.
pub fn accuracy_report(
    predictions: &[usize],
    labels: &[usize],
    snrs: &[f64],
    classes: usize,
) -> Result<EvaluationReport> {
    if predictions.len() != labels.len() || labels.len() != snrs.len() {
        return Err(Error::shape(
            format!("aligned vectors of length {}", labels.len()),
            format!("predictions {} / snrs {}", predictions.len(), snrs.len()),
        ));
    }
    let mut confusion = vec![vec![0u64; classes]; classes];
    let mut per: BTreeMap<SnrKey, (u64, u64)> = BTreeMap::new();
    let mut correct = 0u64;
    for ((&p, &y), &snr) in predictions.iter().zip(labels).zip(snrs) {
        if y >= classes || p >= classes {
            return Err(Error::Validation(format!(
                "class index out of range: true {y}, predicted {p}"
            )));
        }
        confusion[y][p] += 1;
        let hit = (p == y) as u64;
        correct += hit;
        let e = per.entry(SnrKey::from_db(snr)).or_default();
        e.0 += hit;
        e.1 += 1;
    }
    let n = labels.len();
    Ok(EvaluationReport {
        overall_accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        per_snr_accuracy: per.into_iter().map(|(k, (c, t))| (k, c as f64 / t as f64)).collect(),
        confusion,
        class_names: Vec::new(),
        auroc: None,
        openness: None,
        n_known: n,
        n_unknown: 0,
    })
}

/// Probability that a random unknown outscores a random known, ties counted
/// half (the Mann–Whitney form of the ROC area).
pub fn auroc(known_scores: &[f64], unknown_scores: &[f64]) -> Result<f64> {
    if known_scores.is_empty() || unknown_scores.is_empty() {
        return Err(Error::Validation(
            "auroc needs non-empty known and unknown score sets".into(),
        ));
    }
    if known_scores.iter().chain(unknown_scores).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("auroc scores".into()));
    }
    // (score, is_unknown) sorted ascending; average ranks over tie groups
    let mut all: Vec<(f64, bool)> = known_scores
        .iter()
        .map(|&s| (s, false))
        .chain(unknown_scores.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum_unknown = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j share their mean
        let mean_rank = (i + 1 + j) as f64 / 2.0;
        let unknown_in_group = all[i..j].iter().filter(|x| x.1).count();
        rank_sum_unknown += mean_rank * unknown_in_group as f64;
        i = j;
    }
    let nu = unknown_scores.len() as f64;
    let nk = known_scores.len() as f64;
    let u = rank_sum_unknown - nu * (nu + 1.0) / 2.0;
    Ok(u / (nu * nk))
}

/// `1 − sqrt(2·N_tr / (N_tr + N_te))`.
pub fn openness(n_known_train: usize, n_total_test_classes: usize) -> Result<f64> {
    if n_known_train == 0 || n_known_train > n_total_test_classes {
        return Err(Error::Validation(format!(
            "openness needs 0 < N_tr <= N_te, got {n_known_train} and {n_total_test_classes}"
        )));
    }
    let tr = n_known_train as f64;
    let te = n_total_test_classes as f64;
    Ok(1.0 - (2.0 * tr / (tr + te)).sqrt())
}

/// Points `(fpr, tpr)` of the ROC curve, unknown as the positive class.
pub fn roc_curve(known_scores: &[f64], unknown_scores: &[f64]) -> Vec<(f64, f64)> {
    let mut thresholds: Vec<f64> = known_scores.iter().chain(unknown_scores).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let nk = known_scores.len().max(1) as f64;
    let nu = unknown_scores.len().max(1) as f64;
    let mut pts = vec![(0.0, 0.0)];
    for t in thresholds {
        let fpr = known_scores.iter().filter(|&&s| s >= t).count() as f64 / nk;
        let tpr = unknown_scores.iter().filter(|&&s| s >= t).count() as f64 / nu;
        pts.push((fpr, tpr));
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn accuracy_all_correct_and_constant_prediction() {
        let labels: Vec<usize> = (0..12).map(|i| i % 4).collect();
        let snrs = vec![0.0; 12];
        let r = accuracy_report(&labels, &labels, &snrs, 4).unwrap();
        assert_eq!(r.overall_accuracy, 1.0);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(r.confusion[i][j], if i == j { 3 } else { 0 });
            }
        }
        let r = accuracy_report(&[2; 12], &labels, &snrs, 4).unwrap();
        assert_relative_eq!(r.overall_accuracy, 0.25);
        assert_eq!(r.confusion_trace_accuracy(), r.overall_accuracy);
    }

    #[test]
    fn empty_snr_cells_are_absent() {
        let r = accuracy_report(&[0, 1, 1], &[0, 1, 0], &[-10.0, -10.0, 10.0], 2).unwrap();
        assert_eq!(r.per_snr_accuracy.len(), 2);
        assert_eq!(r.per_snr_accuracy[&SnrKey::from_db(-10.0)], 1.0);
        assert_eq!(r.per_snr_accuracy[&SnrKey::from_db(10.0)], 0.0);
        assert!(!r.per_snr_accuracy.contains_key(&SnrKey::from_db(0.0)));
    }

    #[test]
    fn auroc_reference_cases() {
        assert_eq!(auroc(&[0.1, 0.2], &[0.5, 0.9]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5, 0.9], &[0.1, 0.2]).unwrap(), 0.0);
        assert_relative_eq!(
            auroc(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap(),
            7.0 / 9.0,
            epsilon = 1e-15
        );
        assert_eq!(auroc(&[1.0, 1.0], &[1.0]).unwrap(), 0.5);
        assert!(auroc(&[], &[1.0]).is_err());
    }

    #[test]
    fn openness_table_rows() {
        let rows = [
            (1, 0.5000),
            (2, 0.3333),
            (3, 0.2254),
            (4, 0.1472),
            (5, 0.0871),
            (6, 0.0392),
        ];
        for (known, want) in rows {
            let got = openness(known, 7).unwrap();
            assert!((got - want).abs() < 5e-5, "{known}: {got}");
        }
        assert_eq!(openness(7, 7).unwrap(), 0.0);
        assert!(openness(8, 7).is_err());
    }

    #[test]
    fn csv_layouts() {
        let mut r = accuracy_report(&[0, 1], &[0, 0], &[0.0, 10.0], 2).unwrap();
        r.class_names = vec!["A".into(), "B".into()];
        assert!(r.to_csv().starts_with("metric,group,value\naccuracy,all,0.500000\n"));
        assert_eq!(r.confusion_csv(), "true\\pred,A,B\nA,1,1\nB,0,0\n");
    }

    #[test]
    fn roc_curve_ends_at_one_one() {
        let pts = roc_curve(&[0.1, 0.4], &[0.3, 0.8]);
        assert_eq!(*pts.first().unwrap(), (0.0, 0.0));
        assert_eq!(*pts.last().unwrap(), (1.0, 1.0));
    }
}
