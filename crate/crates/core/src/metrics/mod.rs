//! Evaluation statistics: discrimination and threshold metrics, bootstrap
//! confidence intervals, and the hypothesis tests used for cohort tables.

mod bootstrap;
mod hypothesis;
mod report;

pub use bootstrap::{bootstrap_ci, bootstrap_outcome, BootstrapCi, OutcomeBootstrap, DEFAULT_ALPHA, DEFAULT_N_BOOT};
pub use hypothesis::{bonferroni, chi_square, mann_whitney_u, ChiSquare, MannWhitney};
pub use report::{Estimate, MetricReport, MetricRow, RowSpec};

use crate::error::{Error, Result};

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension(format!("{} scores vs {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Contract("scores contain NaN".into()));
    }
    Ok(())
}

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let p = labels.iter().filter(|&&l| l).count();
    (p, labels.len() - p)
}

/// Indices ordered by ascending score.
fn ascending(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    idx
}

/// Runs of equal scores over an ascending order, as `(start, end)` ranges.
fn tie_blocks<'a>(scores: &'a [f64], order: &'a [usize]) -> impl Iterator<Item = (usize, usize)> + 'a {
    let mut start = 0;
    std::iter::from_fn(move || {
        if start >= order.len() {
            return None;
        }
        let v = scores[order[start]];
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == v {
            end += 1;
        }
        let block = (start, end);
        start = end;
        Some(block)
    })
}

/// Area under the ROC curve by the Mann-Whitney rank sum with midranks.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let (p, n) = class_counts(labels);
    if p == 0 || n == 0 {
        return Err(Error::DegenerateLabels(format!("AUROC needs both classes (P={p}, N={n})")));
    }
    let order = ascending(scores);
    // Count concordant pairs block by block: each positive beats every
    // negative below its block and ties half of those inside it.
    let mut negs_below = 0.0;
    let mut pairs = 0.0;
    for (s, e) in tie_blocks(scores, &order) {
        let bp = order[s..e].iter().filter(|&&i| labels[i]).count() as f64;
        let bn = (e - s) as f64 - bp;
        pairs += bp * (negs_below + 0.5 * bn);
        negs_below += bn;
    }
    Ok(pairs / (p as f64 * n as f64))
}

/// Average precision: `Σ ΔRecall · Precision` over descending unique
/// thresholds, tied scores forming one step.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let (p, _) = class_counts(labels);
    if p == 0 {
        return Err(Error::DegenerateLabels("AUPRC needs at least one positive".into()));
    }
    let mut order = ascending(scores);
    order.reverse();
    let (mut tp, mut fp, mut ap) = (0.0, 0.0, 0.0);
    for (s, e) in tie_blocks(scores, &order) {
        let bp = order[s..e].iter().filter(|&&i| labels[i]).count() as f64;
        tp += bp;
        fp += (e - s) as f64 - bp;
        if bp > 0.0 {
            ap += (bp / p as f64) * (tp / (tp + fp));
        }
    }
    Ok(ap)
}

/// Counts of a thresholded classifier that predicts positive when `score ≥ t`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Confusion {
    pub tp: f64,
    pub fp: f64,
    pub tn: f64,
    pub fn_: f64,
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

impl Confusion {
    pub fn sensitivity(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> Option<f64> {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn ppv(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn npv(&self) -> Option<f64> {
        ratio(self.tn, self.tn + self.fn_)
    }
}

pub fn confusion_at_threshold(scores: &[f64], labels: &[bool], t: f64) -> Result<Confusion> {
    check_inputs(scores, labels)?;
    let mut c = Confusion::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= t, l) {
            (true, true) => c.tp += 1.0,
            (true, false) => c.fp += 1.0,
            (false, false) => c.tn += 1.0,
            (false, true) => c.fn_ += 1.0,
        }
    }
    Ok(c)
}

/// Observed score maximising Youden's J (`sensitivity + specificity − 1`);
/// the lowest such score on ties.
pub fn pick_threshold(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let (p, n) = class_counts(labels);
    if p == 0 || n == 0 {
        return Err(Error::DegenerateLabels(format!("threshold needs both classes (P={p}, N={n})")));
    }
    let order = ascending(scores);
    // Sweep thresholds upward; at block start everything at or above is positive.
    let (mut pos_below, mut neg_below) = (0usize, 0usize);
    let mut best = (f64::NEG_INFINITY, scores[order[0]]);
    for (s, e) in tie_blocks(scores, &order) {
        let sens = (p - pos_below) as f64 / p as f64;
        let spec = neg_below as f64 / n as f64;
        let j = sens + spec - 1.0;
        if j > best.0 {
            best = (j, scores[order[s]]);
        }
        let bp = order[s..e].iter().filter(|&&i| labels[i]).count();
        pos_below += bp;
        neg_below += e - s - bp;
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const S: [f64; 4] = [0.1, 0.4, 0.35, 0.8];
    const L: [bool; 4] = [false, false, true, true];

    #[test]
    fn worked_examples() {
        assert_eq!(auroc(&S, &L).unwrap(), 0.75);
        assert!((auprc(&S, &L).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &L).unwrap(), 1.0);
        assert_eq!(auprc(&[0.1, 0.2, 0.8, 0.9], &L).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 4], &L).unwrap(), 0.5);
        assert!(matches!(auroc(&S, &[true; 4]), Err(Error::DegenerateLabels(_))));
        assert!(matches!(auprc(&S, &[false; 4]), Err(Error::DegenerateLabels(_))));
    }

    #[test]
    fn confusion_cases() {
        let mut scores = vec![0.9; 8];
        scores.extend([0.1; 2]);
        scores.extend([0.1; 7]);
        scores.extend([0.9; 3]);
        let labels: Vec<bool> = (0..20).map(|i| i < 10).collect();
        let c = confusion_at_threshold(&scores, &labels, 0.5).unwrap();
        assert_eq!((c.tp, c.fn_, c.tn, c.fp), (8.0, 2.0, 7.0, 3.0));
        assert_eq!(c.sensitivity(), Some(0.8));
        assert_eq!(c.specificity(), Some(0.7));
        assert_eq!(c.ppv(), Some(8.0 / 11.0));
        assert_eq!(c.npv(), Some(7.0 / 9.0));

        let c = confusion_at_threshold(&S, &L, 0.0).unwrap();
        assert_eq!((c.sensitivity(), c.specificity(), c.npv()), (Some(1.0), Some(0.0), None));
        let c = confusion_at_threshold(&S, &L, 0.81).unwrap();
        assert_eq!((c.sensitivity(), c.specificity(), c.ppv()), (Some(0.0), Some(1.0), None));
    }

    #[test]
    fn threshold_cases() {
        assert_eq!(pick_threshold(&[0.1, 0.2, 0.8, 0.9], &L).unwrap(), 0.8);
        assert_eq!(pick_threshold(&[0.4; 4], &L).unwrap(), 0.4);
        assert!(pick_threshold(&S, &[false; 4]).is_err());
    }

    fn brute_auroc(s: &[f64], l: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if l[i] && !l[j] {
                    den += 1.0;
                    num += if s[i] > s[j] {
                        1.0
                    } else if s[i] == s[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    fn enumerate_auprc(s: &[f64], l: &[bool]) -> f64 {
        let p = l.iter().filter(|&&x| x).count() as f64;
        let mut th: Vec<f64> = s.to_vec();
        th.sort_by(|a, b| b.total_cmp(a));
        th.dedup();
        let mut prev_recall = 0.0;
        let mut ap = 0.0;
        for t in th {
            let tp = s.iter().zip(l).filter(|(&v, &y)| v >= t && y).count() as f64;
            let pp = s.iter().filter(|&&v| v >= t).count() as f64;
            let recall = tp / p;
            ap += (recall - prev_recall) * (tp / pp);
            prev_recall = recall;
        }
        ap
    }

    fn youden_scan(s: &[f64], l: &[bool]) -> f64 {
        let mut cands: Vec<f64> = s.to_vec();
        cands.sort_by(f64::total_cmp);
        cands.dedup();
        let mut best = (f64::NEG_INFINITY, 0.0);
        for t in cands {
            let c = confusion_at_threshold(s, l, t).unwrap();
            let j = c.sensitivity().unwrap() + c.specificity().unwrap() - 1.0;
            if j > best.0 {
                best = (j, t);
            }
        }
        best.1
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..50).prop_flat_map(|n| {
            (proptest::collection::vec(0u8..12, n), proptest::collection::vec(any::<bool>(), n)).prop_filter_map(
                "both classes",
                |(s, mut l)| {
                    l[0] = true;
                    l[1] = false;
                    Some((s.into_iter().map(|v| v as f64 / 11.0).collect(), l))
                },
            )
        })
    }

    proptest! {
        #[test]
        fn oracles_agree((s, l) in instance()) {
            prop_assert!((auroc(&s, &l).unwrap() - brute_auroc(&s, &l)).abs() < 1e-12);
            prop_assert!((auprc(&s, &l).unwrap() - enumerate_auprc(&s, &l)).abs() < 1e-12);
            prop_assert_eq!(pick_threshold(&s, &l).unwrap(), youden_scan(&s, &l));
            let t = s[0];
            let c = confusion_at_threshold(&s, &l, t).unwrap();
            let p = l.iter().filter(|&&x| x).count() as f64;
            prop_assert_eq!(c.tp + c.fn_, p);
            prop_assert_eq!(c.tn + c.fp, l.len() as f64 - p);
        }

        #[test]
        fn auroc_is_rank_invariant((s, l) in instance()) {
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert_eq!(auroc(&s, &l).unwrap(), auroc(&t, &l).unwrap());
        }
    }
}
