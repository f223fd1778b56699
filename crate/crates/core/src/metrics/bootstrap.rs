use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ascending, check_inputs, class_counts, tie_blocks, Confusion};
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_N_BOOT: usize = 1000;
pub const DEFAULT_ALPHA: f64 = 0.05;
/// Extra draws allowed for a resample that came out single-class.
const MAX_REDRAWS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BootstrapCi {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    /// Resamples that contributed a value.
    pub n_valid: usize,
    /// Resamples abandoned after exhausting redraws.
    pub skipped: usize,
}

/// Linear-interpolation percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn interval(point: f64, mut values: Vec<f64>, alpha: f64, skipped: usize) -> Result<BootstrapCi> {
    if values.is_empty() {
        return Err(Error::EmptyData("every bootstrap resample was skipped".into()));
    }
    values.sort_by(f64::total_cmp);
    Ok(BootstrapCi {
        point,
        lo: percentile(&values, alpha / 2.0),
        hi: percentile(&values, 1.0 - alpha / 2.0),
        n_valid: values.len(),
        skipped,
    })
}

fn check_alpha(n_boot: usize, alpha: f64) -> Result<()> {
    if n_boot == 0 || !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Contract(format!("bootstrap needs n_boot ≥ 1 and alpha in (0,1), got {n_boot}, {alpha}")));
    }
    Ok(())
}

/// Draws resample `index`: row indices with replacement, redrawn while the
/// labels are single-class. `None` once the redraw budget is spent.
fn draw(seed: u64, index: usize, labels: &[bool]) -> Option<Vec<usize>> {
    let mut rng: ChaCha8Rng = rng::stream(seed, &[rng::label_key("bootstrap"), index as u64]);
    let n = labels.len();
    for _ in 0..=MAX_REDRAWS {
        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let pos = rows.iter().filter(|&&r| labels[r]).count();
        if pos > 0 && pos < n {
            return Some(rows);
        }
    }
    None
}

/// Percentile bootstrap of an arbitrary metric over paired resamples.
pub fn bootstrap_ci<F>(
    scores: &[f64],
    labels: &[bool],
    metric: F,
    n_boot: usize,
    alpha: f64,
    seed: u64,
) -> Result<BootstrapCi>
where
    F: Fn(&[f64], &[bool]) -> Result<f64>,
{
    check_inputs(scores, labels)?;
    check_alpha(n_boot, alpha)?;
    let point = metric(scores, labels)?;
    let mut values = Vec::with_capacity(n_boot);
    let mut skipped = 0;
    let (mut s_buf, mut l_buf) = (Vec::new(), Vec::new());
    for b in 0..n_boot {
        let Some(rows) = draw(seed, b, labels) else {
            skipped += 1;
            continue;
        };
        s_buf.clear();
        l_buf.clear();
        s_buf.extend(rows.iter().map(|&r| scores[r]));
        l_buf.extend(rows.iter().map(|&r| labels[r]));
        match metric(&s_buf, &l_buf) {
            Ok(v) => values.push(v),
            Err(_) => skipped += 1,
        }
    }
    interval(point, values, alpha, skipped)
}

/// Bootstrap intervals for every per-outcome metric, all computed on the
/// same resamples.
#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeBootstrap {
    pub auroc: BootstrapCi,
    pub auprc: BootstrapCi,
    pub sensitivity: BootstrapCi,
    pub specificity: BootstrapCi,
    pub ppv: Option<BootstrapCi>,
    pub npv: Option<BootstrapCi>,
    pub threshold: f64,
    pub skipped: usize,
}

/// Sorted view of one sample; resamples are expressed as per-row counts.
struct Presorted<'a> {
    labels: &'a [bool],
    order: Vec<usize>,
    blocks: Vec<(usize, usize)>,
    /// First block whose score is `≥ threshold`.
    cut: usize,
}

#[derive(Default)]
struct Weighted {
    auroc: f64,
    auprc: f64,
    conf: Confusion,
}

impl<'a> Presorted<'a> {
    fn new(scores: &[f64], labels: &'a [bool], threshold: f64) -> Self {
        let order = ascending(scores);
        let blocks: Vec<_> = tie_blocks(scores, &order).collect();
        let cut = blocks.iter().position(|&(s, _)| scores[order[s]] >= threshold).unwrap_or(blocks.len());
        Self { labels, order, blocks, cut }
    }

    fn block_counts(&self, w: &[f64]) -> Vec<(f64, f64)> {
        self.blocks
            .iter()
            .map(|&(s, e)| {
                let (mut bp, mut bn) = (0.0, 0.0);
                for &i in &self.order[s..e] {
                    if self.labels[i] {
                        bp += w[i];
                    } else {
                        bn += w[i];
                    }
                }
                (bp, bn)
            })
            .collect()
    }

    /// Metrics of the sample where row `i` appears `w[i]` times.
    fn evaluate(&self, w: &[f64]) -> Weighted {
        let counts = self.block_counts(w);
        let p: f64 = counts.iter().map(|c| c.0).sum();
        let n: f64 = counts.iter().map(|c| c.1).sum();
        let mut negs_below = 0.0;
        let mut pairs = 0.0;
        for &(bp, bn) in &counts {
            pairs += bp * (negs_below + 0.5 * bn);
            negs_below += bn;
        }
        let (mut tp, mut fp, mut ap) = (0.0, 0.0, 0.0);
        for &(bp, bn) in counts.iter().rev() {
            tp += bp;
            fp += bn;
            if bp > 0.0 {
                ap += (bp / p) * (tp / (tp + fp));
            }
        }
        let mut conf = Confusion::default();
        for (k, &(bp, bn)) in counts.iter().enumerate() {
            if k >= self.cut {
                conf.tp += bp;
                conf.fp += bn;
            } else {
                conf.fn_ += bp;
                conf.tn += bn;
            }
        }
        Weighted { auroc: pairs / (p * n), auprc: ap, conf }
    }
}

/// Bootstrap of AUROC, AUPRC and the confusion rates at `threshold`. Uses
/// the same resample draws as [`bootstrap_ci`] with the same seed.
pub fn bootstrap_outcome(
    scores: &[f64],
    labels: &[bool],
    threshold: f64,
    n_boot: usize,
    alpha: f64,
    seed: u64,
) -> Result<OutcomeBootstrap> {
    check_inputs(scores, labels)?;
    check_alpha(n_boot, alpha)?;
    let (p, n) = class_counts(labels);
    if p == 0 || n == 0 {
        return Err(Error::DegenerateLabels(format!("bootstrap needs both classes (P={p}, N={n})")));
    }
    let view = Presorted::new(scores, labels, threshold);
    let full = view.evaluate(&vec![1.0; labels.len()]);
    let mut series: [Vec<f64>; 6] = Default::default();
    let mut skipped = 0;
    let mut w = vec![0.0; labels.len()];
    for b in 0..n_boot {
        let Some(rows) = draw(seed, b, labels) else {
            skipped += 1;
            continue;
        };
        w.iter_mut().for_each(|v| *v = 0.0);
        for r in rows {
            w[r] += 1.0;
        }
        let m = view.evaluate(&w);
        let vals =
            [Some(m.auroc), Some(m.auprc), m.conf.sensitivity(), m.conf.specificity(), m.conf.ppv(), m.conf.npv()];
        for (s, v) in series.iter_mut().zip(vals) {
            if let Some(v) = v {
                s.push(v);
            }
        }
    }
    let [s_auroc, s_auprc, s_sens, s_spec, s_ppv, s_npv] = series;
    let opt = |point: Option<f64>, vals: Vec<f64>| -> Result<Option<BootstrapCi>> {
        match point {
            Some(pt) if !vals.is_empty() => Ok(Some(interval(pt, vals, alpha, skipped)?)),
            _ => Ok(None),
        }
    };
    let c = full.conf;
    Ok(OutcomeBootstrap {
        auroc: interval(full.auroc, s_auroc, alpha, skipped)?,
        auprc: interval(full.auprc, s_auprc, alpha, skipped)?,
        sensitivity: interval(c.sensitivity().expect("both classes"), s_sens, alpha, skipped)?,
        specificity: interval(c.specificity().expect("both classes"), s_spec, alpha, skipped)?,
        ppv: opt(c.ppv(), s_ppv)?,
        npv: opt(c.npv(), s_npv)?,
        threshold,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{auprc, auroc, confusion_at_threshold};

    fn sample(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
        let mut rng = rng::stream(seed, &[]);
        let labels: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.3).collect();
        let scores =
            labels.iter().map(|&l| ((rng.random::<f64>() + if l { 0.4 } else { 0.0 }) * 20.0).round() / 20.0).collect();
        (scores, labels)
    }

    #[test]
    fn constant_metric_has_zero_width() {
        let (s, l) = sample(50, 1);
        let ci = bootstrap_ci(&s, &l, |_, _| Ok(0.42), 200, 0.05, 3).unwrap();
        assert_eq!((ci.point, ci.lo, ci.hi), (0.42, 0.42, 0.42));
    }

    #[test]
    fn deterministic_in_seed() {
        let (s, l) = sample(80, 2);
        let a = bootstrap_ci(&s, &l, auroc, 100, 0.05, 9).unwrap();
        let b = bootstrap_ci(&s, &l, auroc, 100, 0.05, 9).unwrap();
        let c = bootstrap_ci(&s, &l, auroc, 100, 0.05, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.lo <= a.point && a.point <= a.hi && a.lo >= 0.0 && a.hi <= 1.0);
    }

    #[test]
    fn single_class_resamples_are_skipped() {
        let s = vec![0.1, 0.2, 0.3];
        let l = vec![true, false, false];
        let ci = bootstrap_ci(&s, &l, auroc, 300, 0.05, 0).unwrap();
        assert_eq!(ci.n_valid + ci.skipped, 300);
        let never = vec![true, false];
        // two rows: P(single class) = 1/2 per draw, so some skips are near certain over many resamples
        let ci = bootstrap_ci(&[0.1, 0.9], &never, auroc, 5000, 0.05, 0).unwrap();
        assert!(ci.skipped > 0);
    }

    #[test]
    fn count_based_path_matches_generic_path() {
        let (s, l) = sample(120, 5);
        let t = 0.5;
        let fast = bootstrap_outcome(&s, &l, t, 200, 0.05, 77).unwrap();
        let check = |got: BootstrapCi, f: &dyn Fn(&[f64], &[bool]) -> Result<f64>| {
            let slow = bootstrap_ci(&s, &l, f, 200, 0.05, 77).unwrap();
            assert!((got.point - slow.point).abs() < 1e-12);
            assert!((got.lo - slow.lo).abs() < 1e-12, "{got:?} vs {slow:?}");
            assert!((got.hi - slow.hi).abs() < 1e-12);
        };
        check(fast.auroc, &|s, l| auroc(s, l));
        check(fast.auprc, &|s, l| auprc(s, l));
        check(fast.sensitivity, &|s, l| Ok(confusion_at_threshold(s, l, t)?.sensitivity().unwrap()));
        check(fast.ppv.unwrap(), &|s, l| {
            confusion_at_threshold(s, l, t)?.ppv().ok_or(Error::Contract("undefined".into()))
        });
    }
}
