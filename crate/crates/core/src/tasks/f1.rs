//! Macro-averaged F1.

use serde::{Deserialize, Serialize};

use super::TaskError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroF1 {
    /// Unweighted mean of `per_class`, in [0, 1].
    pub score: f64,
    pub per_class: Vec<f64>,
    /// Indices of classes absent from both gold and predictions.
    pub flagged: Vec<usize>,
}

/// `predictions` and `gold` hold indices into a label set of `n_labels`.
pub fn macro_f1(predictions: &[usize], gold: &[usize], n_labels: usize) -> Result<MacroF1, TaskError> {
    if predictions.len() != gold.len() {
        return Err(TaskError::Mismatch(format!(
            "{} predictions for {} gold labels",
            predictions.len(),
            gold.len()
        )));
    }
    if n_labels == 0 {
        return Err(TaskError::Config("empty label set".into()));
    }
    if let Some(&l) = predictions.iter().chain(gold).find(|&&l| l >= n_labels) {
        return Err(TaskError::Data(format!("label {l} outside a set of {n_labels}")));
    }
    let mut tp = vec![0usize; n_labels];
    let mut pred_n = vec![0usize; n_labels];
    let mut gold_n = vec![0usize; n_labels];
    for (&p, &g) in predictions.iter().zip(gold) {
        pred_n[p] += 1;
        gold_n[g] += 1;
        if p == g {
            tp[p] += 1;
        }
    }
    let mut flagged = Vec::new();
    let per_class: Vec<f64> = (0..n_labels)
        .map(|c| {
            if pred_n[c] + gold_n[c] == 0 {
                flagged.push(c);
                0.0
            } else {
                2.0 * tp[c] as f64 / (pred_n[c] + gold_n[c]) as f64
            }
        })
        .collect();
    let score = per_class.iter().sum::<f64>() / n_labels as f64;
    Ok(MacroF1 { score, per_class, flagged })
}

/// Label-set lookup for string labels.
pub fn label_index(labels: &[String], label: &str) -> Result<usize, TaskError> {
    labels
        .iter()
        .position(|l| l == label)
        .ok_or_else(|| TaskError::Data(format!("label {label:?} not in {labels:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect() {
        assert_eq!(macro_f1(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap().score, 1.0);
    }

    #[test]
    fn degenerate_binary() {
        let m = macro_f1(&[0, 0, 0, 0], &[0, 0, 1, 1], 2).unwrap();
        // class 0: tp 2, fp 2, fn 0 -> 2*0.5*1/(1.5); class 1: 0.
        assert!((m.score - 1.0 / 3.0).abs() < 1e-15);
        assert!(m.flagged.is_empty());
    }

    #[test]
    fn absent_class_flagged() {
        let m = macro_f1(&[0, 1], &[0, 1], 3).unwrap();
        assert_eq!(m.flagged, vec![2]);
        assert!((m.score - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(macro_f1(&[0], &[0, 1], 2), Err(TaskError::Mismatch(_))));
    }

    proptest! {
        #[test]
        fn permutation_invariant(pairs in prop::collection::vec((0usize..3, 0usize..3), 1..40), perm in Just([2usize, 0, 1])) {
            let (p, g): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let a = macro_f1(&p, &g, 3).unwrap().score;
            let pp: Vec<_> = p.iter().map(|&x| perm[x]).collect();
            let gg: Vec<_> = g.iter().map(|&x| perm[x]).collect();
            let b = macro_f1(&pp, &gg, 3).unwrap().score;
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }
}
