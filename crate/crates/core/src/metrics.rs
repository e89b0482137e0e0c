//! Instance matching, mean average precision at a single IoU threshold and
//! the mean absolute error of IoU-score prediction.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mask::{iou, InstanceAnnotation, InstancePrediction};
use crate::ImageId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchFlag {
    TruePositive,
    FalsePositive,
}

/// Matching outcome for one image, indexed like the input predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub image_id: ImageId,
    pub flags: Vec<MatchFlag>,
    pub matched_truth: Vec<Option<usize>>,
    /// IoU with the matched ground truth, 0 for false positives.
    pub ious: Vec<f64>,
}

/// Greedy matching in descending confidence (ties keep input order). Each
/// prediction claims the unmatched same-class ground truth with the highest
/// IoU when that IoU reaches `iou_threshold`.
pub fn match_instances(
    image_id: ImageId,
    predictions: &[InstancePrediction],
    truths: &[InstanceAnnotation],
    iou_threshold: f64,
) -> Result<MatchResult> {
    if !(iou_threshold > 0.0 && iou_threshold <= 1.0) {
        return Err(Error::InvalidValue(format!(
            "IoU threshold {iou_threshold} outside (0, 1]"
        )));
    }
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| {
        predictions[b]
            .confidence
            .total_cmp(&predictions[a].confidence)
    });

    let mut taken = vec![false; truths.len()];
    let mut flags = vec![MatchFlag::FalsePositive; predictions.len()];
    let mut matched_truth = vec![None; predictions.len()];
    let mut ious = vec![0.0; predictions.len()];

    for p in order {
        let pred = &predictions[p];
        let mut best: Option<(usize, f64)> = None;
        for (g, truth) in truths.iter().enumerate() {
            if taken[g] || truth.class_id != pred.class_id {
                continue;
            }
            let v = iou(&pred.mask, &truth.mask)?;
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, v)) = best {
            if v >= iou_threshold {
                taken[g] = true;
                flags[p] = MatchFlag::TruePositive;
                matched_truth[p] = Some(g);
                ious[p] = v;
            }
        }
    }
    Ok(MatchResult {
        image_id,
        flags,
        matched_truth,
        ious,
    })
}

/// All-points interpolated average precision of a ranked detection list.
/// `ranked` must already be in evaluation order.
pub fn average_precision(ranked: &[bool], num_truths: usize) -> f64 {
    if num_truths == 0 {
        return 0.0;
    }
    let mut precision = Vec::with_capacity(ranked.len());
    let mut recall = Vec::with_capacity(ranked.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for &hit in ranked {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        precision.push(tp as f64 / (tp + fp) as f64);
        recall.push(tp as f64 / num_truths as f64);
    }
    // monotone envelope, right to left
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (r, p) in recall.iter().zip(&precision) {
        if *r > prev_recall {
            ap += (r - prev_recall) * p;
            prev_recall = *r;
        }
    }
    ap
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub per_class: BTreeMap<u32, f64>,
    pub mean_ap: f64,
    /// Percentage points.
    pub mae_iou: Option<f64>,
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class_id,ap\n");
        for (c, ap) in &self.per_class {
            let _ = writeln!(out, "{c},{ap:.6}");
        }
        let _ = writeln!(out, "mean_ap,{:.6}", self.mean_ap);
        match self.mae_iou {
            Some(m) => {
                let _ = writeln!(out, "mae_iou,{m:.6}");
            }
            None => out.push_str("mae_iou,\n"),
        }
        out
    }
}

fn check_same_keys<A, B>(a: &BTreeMap<ImageId, A>, b: &BTreeMap<ImageId, B>) -> Result<()> {
    if a.len() != b.len() || a.keys().zip(b.keys()).any(|(x, y)| x != y) {
        let only_a = a.keys().find(|k| !b.contains_key(k));
        let only_b = b.keys().find(|k| !a.contains_key(k));
        return Err(Error::KeyMismatch(format!(
            "first unmatched ids: {only_a:?} / {only_b:?}"
        )));
    }
    Ok(())
}

/// Mean AP over classes that have at least one ground-truth instance.
///
/// Detections of a class are ranked globally by confidence, then image id,
/// then position within the image.
pub fn mean_ap(
    predictions: &BTreeMap<ImageId, Vec<InstancePrediction>>,
    truths: &BTreeMap<ImageId, Vec<InstanceAnnotation>>,
    iou_threshold: f64,
) -> Result<MetricReport> {
    check_same_keys(predictions, truths)?;
    let mut num_truths: BTreeMap<u32, usize> = BTreeMap::new();
    for t in truths.values().flatten() {
        *num_truths.entry(t.class_id).or_default() += 1;
    }
    if num_truths.is_empty() {
        return Err(Error::Empty("no ground-truth instances"));
    }

    let pairs: Vec<(&ImageId, &Vec<InstancePrediction>, &Vec<InstanceAnnotation>)> = predictions
        .iter()
        .zip(truths.values())
        .map(|((id, p), t)| (id, p, t))
        .collect();
    let matches = pairs
        .par_iter()
        .map(|(id, p, t)| match_instances(**id, p, t, iou_threshold))
        .collect::<Result<Vec<_>>>()?;

    // (confidence, image, index, hit) per class
    let mut detections: BTreeMap<u32, Vec<(f64, ImageId, usize, bool)>> = BTreeMap::new();
    for ((id, preds, _), m) in pairs.iter().zip(&matches) {
        for (i, (pred, flag)) in preds.iter().zip(&m.flags).enumerate() {
            detections.entry(pred.class_id).or_default().push((
                pred.confidence,
                **id,
                i,
                *flag == MatchFlag::TruePositive,
            ));
        }
    }

    let mut per_class = BTreeMap::new();
    for (&class_id, &n) in &num_truths {
        let mut dets = detections.remove(&class_id).unwrap_or_default();
        dets.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let ranked: Vec<bool> = dets.iter().map(|d| d.3).collect();
        per_class.insert(class_id, average_precision(&ranked, n));
    }
    let mean_ap = per_class.values().sum::<f64>() / per_class.len() as f64;
    Ok(MetricReport {
        per_class,
        mean_ap,
        mae_iou: None,
    })
}

/// Mean absolute error between predicted and true per-image scores, in
/// percentage points.
pub fn mae_iou(predicted: &BTreeMap<ImageId, f64>, truth: &BTreeMap<ImageId, f64>) -> Result<f64> {
    check_same_keys(predicted, truth)?;
    if predicted.is_empty() {
        return Err(Error::Empty("no scores to compare"));
    }
    let total: f64 = predicted
        .values()
        .zip(truth.values())
        .map(|(p, t)| (p - t).abs())
        .sum();
    Ok(100.0 * total / predicted.len() as f64)
}
