//! Relation-extraction scoring with NoRelation excluded from every count,
//! plus rank diagnostics for the link-prediction head.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    Micro,
    Macro,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub relation: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ClassCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        harmonic(self.precision(), self.recall())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub averaging: Averaging,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// One entry per non-NoRelation class seen in golds or predictions,
    /// ascending by relation index.
    pub per_relation: Vec<ClassCounts>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn class_counts(preds: &[usize], golds: &[usize], no_relation: usize) -> Result<Vec<ClassCounts>> {
    if preds.len() != golds.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    let classes: BTreeSet<usize> = preds
        .iter()
        .chain(golds)
        .copied()
        .filter(|&c| c != no_relation)
        .collect();
    let mut counts: Vec<ClassCounts> = classes
        .into_iter()
        .map(|relation| ClassCounts {
            relation,
            tp: 0,
            fp: 0,
            fn_: 0,
        })
        .collect();
    let slot = |c: usize, counts: &[ClassCounts]| counts.binary_search_by_key(&c, |k| k.relation).unwrap();
    for (&p, &g) in preds.iter().zip(golds) {
        if p == g {
            if p != no_relation {
                let i = slot(p, &counts);
                counts[i].tp += 1;
            }
            continue;
        }
        if p != no_relation {
            let i = slot(p, &counts);
            counts[i].fp += 1;
        }
        if g != no_relation {
            let i = slot(g, &counts);
            counts[i].fn_ += 1;
        }
    }
    Ok(counts)
}

/// Micro-averaged scores: precision over non-NoRelation predictions,
/// recall over non-NoRelation golds.
pub fn micro_prf(preds: &[usize], golds: &[usize], no_relation: usize) -> Result<EvalReport> {
    let per_relation = class_counts(preds, golds, no_relation)?;
    let tp: usize = per_relation.iter().map(|c| c.tp).sum();
    let predicted: usize = per_relation.iter().map(|c| c.tp + c.fp).sum();
    let gold: usize = per_relation.iter().map(|c| c.tp + c.fn_).sum();
    let precision = ratio(tp, predicted);
    let recall = ratio(tp, gold);
    Ok(EvalReport {
        averaging: Averaging::Micro,
        precision,
        recall,
        f1: harmonic(precision, recall),
        per_relation,
    })
}

/// Unweighted means of per-class precision, recall and F1. The reported
/// F1 is the mean of per-class F1, not the harmonic mean of the averaged
/// precision and recall.
pub fn macro_prf(preds: &[usize], golds: &[usize], no_relation: usize) -> Result<EvalReport> {
    let per_relation = class_counts(preds, golds, no_relation)?;
    let n = per_relation.len();
    let mean = |f: fn(&ClassCounts) -> f64| {
        if n == 0 {
            0.0
        } else {
            per_relation.iter().map(f).sum::<f64>() / n as f64
        }
    };
    Ok(EvalReport {
        averaging: Averaging::Macro,
        precision: mean(ClassCounts::precision),
        recall: mean(ClassCounts::recall),
        f1: mean(ClassCounts::f1),
        per_relation,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KglpDiagnostics {
    pub hits_at_1: f64,
    pub hits_at_10: f64,
    pub mrr: f64,
    /// Number of (query, true answer) pairs ranked.
    pub ranked: usize,
}

/// Filtered rank metrics. For every column of `scores` (`|dom| x B`) and
/// every candidate marked 1 in `targets`, the rank counts only non-answer
/// candidates scoring higher, or equal with a lower index. Columns with
/// zero `weights` are skipped.
pub fn kglp_diagnostics(scores: &Matrix, targets: &Matrix, weights: Option<&[f64]>) -> Result<KglpDiagnostics> {
    if scores.dim() != targets.dim() {
        return Err(Error::Shape(format!(
            "scores {:?} and targets {:?} differ",
            scores.dim(),
            targets.dim()
        )));
    }
    if let Some(w) = weights {
        if w.len() != scores.ncols() {
            return Err(Error::Shape("one weight per column expected".into()));
        }
    }
    let (mut h1, mut h10, mut rr, mut n) = (0usize, 0usize, 0.0, 0usize);
    for j in 0..scores.ncols() {
        if weights.is_some_and(|w| w[j] == 0.0) {
            continue;
        }
        let col = scores.column(j);
        let tgt = targets.column(j);
        for p in (0..col.len()).filter(|&p| tgt[p] > 0.5) {
            let ahead = (0..col.len())
                .filter(|&q| q != p && tgt[q] <= 0.5)
                .filter(|&q| col[q] > col[p] || (col[q] == col[p] && q < p))
                .count();
            let rank = ahead + 1;
            h1 += usize::from(rank <= 1);
            h10 += usize::from(rank <= 10);
            rr += 1.0 / rank as f64;
            n += 1;
        }
    }
    let avg = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
    Ok(KglpDiagnostics {
        hits_at_1: avg(h1 as f64),
        hits_at_10: avg(h10 as f64),
        mrr: avg(rr),
        ranked: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const NR: usize = 0;
    const A: usize = 1;
    const B: usize = 2;
    const C: usize = 3;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn micro_hand_example() {
        let r = micro_prf(&[A, B, A, B], &[A, A, NR, B], NR).unwrap();
        assert!(close(r.precision, 0.5));
        assert!(close(r.recall, 2.0 / 3.0));
        assert!(close(r.f1, 4.0 / 7.0));
    }

    #[test]
    fn micro_perfect_and_degenerate() {
        let g = [A, NR, B, NR, C];
        let r = micro_prf(&g, &g, NR).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        let r = micro_prf(&[NR; 3], &[A, B, NR], NR).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
        assert!(micro_prf(&[A], &[A, B], NR).is_err());
    }

    #[test]
    fn macro_examples() {
        let r = macro_prf(&[A, A, NR, NR], &[A, A, B, B], NR).unwrap();
        assert!(close(r.f1, 0.5));

        let single = macro_prf(&[A, A, NR, A], &[A, A, A, NR], NR).unwrap();
        let micro = micro_prf(&[A, A, NR, A], &[A, A, A, NR], NR).unwrap();
        assert!(close(single.f1, micro.f1));
        assert!(close(single.precision, micro.precision));
    }

    #[test]
    fn macro_three_class_confusion() {
        // A: tp 2 fp 1 fn 1; B: tp 1 fp 2 fn 1; C: tp 0 fp 0 fn 1.
        let golds = [A, A, A, B, B, C, NR];
        let preds = [A, A, B, B, A, NR, B];
        let r = macro_prf(&preds, &golds, NR).unwrap();
        let fa = 2.0 / 3.0;
        let fb = 0.4;
        assert!(close(r.f1, (fa + fb + 0.0) / 3.0));
        assert!(close(r.precision, (2.0 / 3.0 + 1.0 / 3.0 + 0.0) / 3.0));
        assert!(close(r.recall, (2.0 / 3.0 + 0.5 + 0.0) / 3.0));
    }

    #[test]
    fn correct_no_relation_pairs_change_nothing() {
        let r1 = micro_prf(&[A, B], &[A, A], NR).unwrap();
        let r2 = micro_prf(&[A, B, NR], &[A, A, NR], NR).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn diagnostics_examples() {
        let scores = Matrix::from_shape_vec((4, 1), vec![0.1, 0.9, 0.3, 0.2]).unwrap();
        let targets = Matrix::from_shape_vec((4, 1), vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let d = kglp_diagnostics(&scores, &targets, None).unwrap();
        assert_eq!((d.hits_at_1, d.mrr), (1.0, 1.0));

        let scores = Matrix::from_elem((4, 1), 0.5);
        let targets = Matrix::from_shape_vec((4, 1), vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let d = kglp_diagnostics(&scores, &targets, None).unwrap();
        assert!(close(d.mrr, 1.0 / 3.0));
        assert_eq!(d.hits_at_1, 0.0);
        assert_eq!(d.hits_at_10, 1.0);
    }

    #[test]
    fn diagnostics_filter_other_answers() {
        let scores = Matrix::from_shape_vec((3, 1), vec![0.9, 0.8, 0.1]).unwrap();
        let targets = Matrix::from_shape_vec((3, 1), vec![1.0, 1.0, 0.0]).unwrap();
        let d = kglp_diagnostics(&scores, &targets, None).unwrap();
        assert_eq!(d.mrr, 1.0);
        assert_eq!(d.ranked, 2);
        let skipped = kglp_diagnostics(&scores, &targets, Some(&[0.0])).unwrap();
        assert_eq!(skipped.ranked, 0);
    }
}
