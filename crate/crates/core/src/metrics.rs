//! Dice, expected calibration error, precision-recall AUC and summaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uncertainty::EnsembleResult;
use crate::volume::SegmentationMask;

pub const DEFAULT_ECE_BINS: usize = 15;

/// Dice of class `class` over a whole slice stack; `None` when the ground
/// truth never contains the class.
pub fn dice(pred: &[SegmentationMask], gt: &[SegmentationMask], class: u32) -> Result<Option<f64>> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "{} predicted slices for {} reference slices",
            pred.len(),
            gt.len()
        )));
    }
    let (mut inter, mut np, mut ng) = (0usize, 0usize, 0usize);
    for (p, g) in pred.iter().zip(gt) {
        if p.dims() != g.dims() {
            return Err(Error::Shape(format!("slice {:?} vs {:?}", p.dims(), g.dims())));
        }
        for (&a, &b) in p.labels().iter().zip(g.labels()) {
            let (ia, ib) = (a == class, b == class);
            np += ia as usize;
            ng += ib as usize;
            inter += (ia && ib) as usize;
        }
    }
    if ng == 0 {
        return Ok(None);
    }
    Ok(Some(2.0 * inter as f64 / (np + ng) as f64))
}

/// Per-bin calibration statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStats {
    pub n_bins: usize,
    pub counts: Vec<usize>,
    pub mean_confidence: Vec<f64>,
    pub mean_accuracy: Vec<f64>,
}

/// Equal-width bin of a confidence in [0, 1]: `[b/n, (b+1)/n)`, the last bin closed.
fn bin_index(conf: f64, n_bins: usize) -> usize {
    let n = n_bins as f64;
    let mut b = ((conf * n).floor() as usize).min(n_bins - 1);
    // floor of a product can land one bin off the exact edge comparison
    while b > 0 && conf < b as f64 / n {
        b -= 1;
    }
    while b + 1 < n_bins && conf >= (b + 1) as f64 / n {
        b += 1;
    }
    b
}

pub fn bin_stats(confidence: &[f64], correct: &[bool], n_bins: usize) -> Result<BinStats> {
    if confidence.is_empty() {
        return Err(Error::Argument("calibration needs at least one pixel".into()));
    }
    if confidence.len() != correct.len() {
        return Err(Error::Shape(format!(
            "{} confidences for {} outcomes",
            confidence.len(),
            correct.len()
        )));
    }
    if n_bins == 0 {
        return Err(Error::Argument("n_bins must be positive".into()));
    }
    if let Some(c) = confidence.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return Err(Error::Argument(format!("confidence {c} outside [0, 1]")));
    }
    let mut counts = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0; n_bins];
    let mut acc_sum = vec![0.0; n_bins];
    for (&c, &ok) in confidence.iter().zip(correct) {
        let b = bin_index(c, n_bins);
        counts[b] += 1;
        conf_sum[b] += c;
        acc_sum[b] += if ok { 1.0 } else { 0.0 };
    }
    let mean = |sums: &[f64]| -> Vec<f64> {
        sums.iter()
            .zip(&counts)
            .map(|(s, &k)| if k > 0 { s / k as f64 } else { 0.0 })
            .collect()
    };
    Ok(BinStats {
        n_bins,
        mean_confidence: mean(&conf_sum),
        mean_accuracy: mean(&acc_sum),
        counts,
    })
}

/// Expected calibration error with `n_bins` equal-width bins.
pub fn ece(confidence: &[f64], correct: &[bool], n_bins: usize) -> Result<f64> {
    let stats = bin_stats(confidence, correct, n_bins)?;
    let n = confidence.len() as f64;
    let mut total = 0.0;
    for b in 0..n_bins {
        if stats.counts[b] > 0 {
            total += stats.counts[b] as f64 / n
                * (stats.mean_confidence[b] - stats.mean_accuracy[b]).abs();
        }
    }
    Ok(total)
}

/// Step-wise average precision; tied scores enter as one operating point.
/// `None` when there are no positives.
pub fn prauc(scores: &[f64], positive: &[bool]) -> Result<Option<f64>> {
    if scores.len() != positive.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            positive.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Argument("NaN score".into()));
    }
    let total_pos = positive.iter().filter(|&&p| p).count();
    if total_pos == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / total_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(Some(area))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub case_id: String,
    /// Index `k` holds class `k + 1`; `None` where the class is absent from the reference.
    pub dice: Vec<Option<f64>>,
    pub ece: f64,
    pub prauc: Option<f64>,
}

impl CaseMetrics {
    /// Mean over the foreground classes present in this case.
    pub fn mean_dice(&self) -> Option<f64> {
        mean(self.dice.iter().flatten().cloned())
    }
}

/// Scores an ensemble prediction for every slice of a case.
pub fn evaluate_case(
    case_id: &str,
    predictions: &[EnsembleResult],
    reference: &[SegmentationMask],
    n_bins: usize,
) -> Result<CaseMetrics> {
    if predictions.len() != reference.len() || predictions.is_empty() {
        return Err(Error::Shape(format!(
            "{} predicted slices for {} reference slices",
            predictions.len(),
            reference.len()
        )));
    }
    let classes = reference[0].num_classes();
    let preds: Vec<SegmentationMask> = predictions.iter().map(|p| p.label_map.clone()).collect();
    let dice = (1..classes as u32)
        .map(|c| dice(&preds, reference, c))
        .collect::<Result<Vec<_>>>()?;
    let mut conf = Vec::new();
    let mut correct = Vec::new();
    let mut fg_prob = Vec::new();
    let mut fg_gt = Vec::new();
    for (p, g) in predictions.iter().zip(reference) {
        if p.num_classes != classes {
            return Err(Error::Shape("prediction and reference class counts differ".into()));
        }
        conf.extend(p.confidence());
        correct.extend(p.label_map.labels().iter().zip(g.labels()).map(|(a, b)| a == b));
        fg_prob.extend(p.foreground_prob());
        fg_gt.extend(g.labels().iter().map(|&l| l != 0));
    }
    Ok(CaseMetrics {
        case_id: case_id.to_string(),
        dice,
        ece: ece(&conf, &correct, n_bins)?,
        prauc: prauc(&fg_prob, &fg_gt)?,
    })
}

/// Mean and population standard deviation over the defined entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub count: usize,
}

impl Stat {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        match mean(v.iter().cloned()) {
            None => Self {
                mean: None,
                std: None,
                count: 0,
            },
            Some(m) => {
                let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
                Self {
                    mean: Some(m),
                    std: Some(var.sqrt()),
                    count: v.len(),
                }
            }
        }
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in values {
        s += v;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_cases: usize,
    /// Index `k` summarizes class `k + 1` over the cases containing it.
    pub dice: Vec<Stat>,
    /// Mean of the per-class means that are defined.
    pub mean_dice: Option<f64>,
    pub ece: Stat,
    pub prauc: Stat,
}

pub fn aggregate(cases: &[CaseMetrics]) -> Summary {
    let n_fg = cases.iter().map(|c| c.dice.len()).max().unwrap_or(0);
    let dice: Vec<Stat> = (0..n_fg)
        .map(|k| Stat::of(cases.iter().filter_map(|c| c.dice.get(k).cloned().flatten())))
        .collect();
    Summary {
        n_cases: cases.len(),
        mean_dice: mean(dice.iter().filter_map(|s| s.mean)),
        dice,
        ece: Stat::of(cases.iter().map(|c| c.ece)),
        prauc: Stat::of(cases.iter().filter_map(|c| c.prauc)),
    }
}
