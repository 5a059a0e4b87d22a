//! Ranking and calibration metrics for binary heads.

use serde::{Deserialize, Serialize};

use super::loss::bce;

/// Area under the ROC curve via the rank statistic; tied scores share the
/// average rank, which gives half credit to tied positive/negative pairs.
/// `None` when either class is absent.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "auc: scores/labels length mismatch");
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their average
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Metrics of one head over a set of labeled predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadMetrics {
    pub count: usize,
    pub positives: usize,
    pub auc: Option<f64>,
    pub accuracy: f64,
    pub bce: f64,
}

/// `None` when no prediction carries a label.
pub fn head_metrics(pairs: &[(f64, Option<bool>)]) -> Option<HeadMetrics> {
    let labeled: Vec<(f64, bool)> = pairs.iter().filter_map(|&(p, y)| y.map(|y| (p, y))).collect();
    if labeled.is_empty() {
        return None;
    }
    let scores: Vec<f64> = labeled.iter().map(|x| x.0).collect();
    let labels: Vec<bool> = labeled.iter().map(|x| x.1).collect();
    let n = labeled.len() as f64;
    let correct = labeled.iter().filter(|&&(p, y)| (p >= 0.5) == y).count();
    let total_bce: f64 = labeled.iter().map(|&(p, y)| bce(p, y)).sum();
    Some(HeadMetrics {
        count: labeled.len(),
        positives: labels.iter().filter(|&&y| y).count(),
        auc: auc(&scores, &labels),
        accuracy: correct as f64 / n,
        bce: total_bce / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force pair enumeration.
    fn auc_pairs(scores: &[f64], labels: &[bool]) -> f64 {
        let mut credit = 0.0;
        let mut pairs = 0.0;
        for (i, &yi) in labels.iter().enumerate() {
            for (j, &yj) in labels.iter().enumerate() {
                if yi && !yj {
                    pairs += 1.0;
                    credit += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        credit / pairs
    }

    #[test]
    fn auc_cases() {
        assert_eq!(auc(&[1.0, 0.0, 1.0, 0.0], &[true, false, true, false]), Some(1.0));
        assert_eq!(auc(&[0.5; 6], &[true, false, true, false, false, true]), Some(0.5));
        assert_eq!(auc(&[0.9, 0.4, 0.1], &[true, false, false]), Some(1.0));
        assert_eq!(auc(&[0.1, 0.4, 0.9], &[true, false, false]), Some(0.0));
        assert_eq!(auc(&[0.3, 0.2], &[true, true]), None);
    }

    #[test]
    fn auc_matches_pair_enumeration() {
        let scores = [0.3, 0.3, 0.8, 0.1, 0.5, 0.5, 0.5, 0.9, 0.2];
        let labels = [true, false, true, false, true, false, false, true, true];
        let fast = auc(&scores, &labels).unwrap();
        assert!((fast - auc_pairs(&scores, &labels)).abs() < 1e-15);
    }

    #[test]
    fn head_metric_values() {
        let m = head_metrics(&[(0.9, Some(true)), (0.2, Some(false)), (0.6, Some(false)), (0.1, None)]).unwrap();
        assert_eq!(m.count, 3);
        assert_eq!(m.positives, 1);
        assert!((m.accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.auc, Some(1.0));
        assert!(head_metrics(&[(0.5, None)]).is_none());
    }
}
