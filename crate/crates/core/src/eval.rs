//! Point-level action-start detection AP.
//!
//! A prediction is a true positive when its class matches a ground-truth
//! action start in the same video and the two times differ by strictly less
//! than the offset threshold; each ground truth absorbs at most one
//! prediction. AP is averaged over classes (mAP) and mAP over offsets
//! (average mAP).

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{
    ASGroundTruth, ASPrediction, ClassAp, ClassCounts, ClassId, EvalConfig, EvalReport, OffsetMap,
    OrderedOffset,
};

/// Ranking order: score descending, then earlier time, then video id.
pub fn compare_ranked(a: &ASPrediction, b: &ASPrediction) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.time.total_cmp(&b.time))
        .then_with(|| a.video_id.cmp(&b.video_id))
}

/// Indices of `preds` in ranking order (stable for full ties).
pub fn rank_predictions(preds: &[ASPrediction]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&i, &j| compare_ranked(&preds[i], &preds[j]));
    order
}

/// Outcome of matching a prediction list against ground truth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching {
    /// Prediction indices in ranking order.
    pub order: Vec<usize>,
    /// `flags[r]` tells whether the prediction at rank `r` is a true positive.
    pub flags: Vec<bool>,
    /// Non-ambiguous ground truths taking part in the matching.
    pub num_gt: usize,
}

impl Matching {
    pub fn true_positives(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }

    pub fn false_positives(&self) -> usize {
        self.flags.len() - self.true_positives()
    }

    /// Flags indexed like the input predictions.
    pub fn flags_by_prediction(&self) -> Vec<bool> {
        let mut out = vec![false; self.flags.len()];
        for (&i, &f) in self.order.iter().zip(&self.flags) {
            out[i] = f;
        }
        out
    }
}

struct Bipartite {
    // candidate ground truths per ranked prediction, nearest first
    candidates: Vec<Vec<usize>>,
    gt_match: Vec<Option<usize>>,
    seen: Vec<usize>,
    stamp: usize,
}

impl Bipartite {
    fn augment(&mut self, pred: usize) -> bool {
        for k in 0..self.candidates[pred].len() {
            let gt = self.candidates[pred][k];
            if self.seen[gt] == self.stamp {
                continue;
            }
            self.seen[gt] = self.stamp;
            let free = match self.gt_match[gt] {
                None => true,
                Some(other) => self.augment(other),
            };
            if free {
                self.gt_match[gt] = Some(pred);
                return true;
            }
        }
        false
    }
}

/// Matches predictions to ground truths at one offset threshold.
///
/// Predictions are taken in ranking order. Each one becomes a true positive
/// if it can be matched while every earlier true positive stays matched,
/// re-assigning earlier matches along an augmenting path when needed;
/// otherwise it is a false positive (a miss or a duplicate). A free
/// prediction claims its nearest eligible ground truth. The resulting
/// true-positive set is the best achievable in ranking order: no other
/// one-to-one assignment has more true positives among the top `r`
/// predictions, for any `r`.
///
/// Ambiguous ground truths are ignored.
pub fn match_predictions(preds: &[ASPrediction], gts: &[ASGroundTruth], offset: f64) -> Matching {
    let gts: Vec<&ASGroundTruth> = gts.iter().filter(|g| !g.ambiguous).collect();
    let order = rank_predictions(preds);

    let mut groups: HashMap<(&str, ClassId), Vec<usize>> = HashMap::new();
    for (j, g) in gts.iter().enumerate() {
        groups
            .entry((g.video_id.as_str(), g.action_class))
            .or_default()
            .push(j);
    }
    for list in groups.values_mut() {
        list.sort_by(|&a, &b| gts[a].as_time.total_cmp(&gts[b].as_time).then(a.cmp(&b)));
    }

    let candidates: Vec<Vec<usize>> = order
        .iter()
        .map(|&i| {
            let p = &preds[i];
            let Some(list) = groups.get(&(p.video_id.as_str(), p.action_class)) else {
                return Vec::new();
            };
            let mut near: Vec<(f64, usize)> = list
                .iter()
                .map(|&j| ((p.time - gts[j].as_time).abs(), j))
                .filter(|(d, _)| *d < offset)
                .collect();
            near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            near.into_iter().map(|(_, j)| j).collect()
        })
        .collect();

    let mut graph = Bipartite {
        candidates,
        gt_match: vec![None; gts.len()],
        seen: vec![0; gts.len()],
        stamp: 0,
    };
    let flags = (0..order.len())
        .map(|r| {
            graph.stamp += 1;
            graph.augment(r)
        })
        .collect();

    Matching {
        order,
        flags,
        num_gt: gts.len(),
    }
}

/// Recall-depth AP: precisions at true positives whose cumulative recall is
/// at most `depth`, summed and divided by `depth * num_gt`.
pub fn average_precision(flags: &[bool], num_gt: usize, depth: f64) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let n = num_gt as f64;
    // guards recall == depth against rounding of depth * n
    let max_tp = (depth * n + 1e-9).floor() as usize;
    let mut tp = 0usize;
    let mut sum = 0.0;
    for (rank, &hit) in flags.iter().enumerate() {
        if !hit {
            continue;
        }
        tp += 1;
        if tp > max_tp {
            break;
        }
        sum += tp as f64 / (rank + 1) as f64;
    }
    sum / (depth * n)
}

/// `(recall, precision)` after each ranked prediction.
pub fn precision_recall_curve(flags: &[bool], num_gt: usize) -> Vec<(f64, f64)> {
    let mut tp = 0usize;
    flags
        .iter()
        .enumerate()
        .map(|(rank, &hit)| {
            tp += hit as usize;
            let recall = if num_gt == 0 { 0.0 } else { tp as f64 / num_gt as f64 };
            (recall, tp as f64 / (rank + 1) as f64)
        })
        .collect()
}

fn check_inputs(preds: &[ASPrediction], gts: &[ASGroundTruth], k: usize) -> Result<()> {
    let valid = |c: ClassId| c >= 1 && c as usize <= k;
    if let Some(p) = preds.iter().find(|p| !valid(p.action_class)) {
        return Err(Error::Data(format!(
            "prediction in {} at {}s has class {} outside 1..={k}",
            p.video_id, p.time, p.action_class
        )));
    }
    if let Some(g) = gts.iter().find(|g| !valid(g.action_class)) {
        return Err(Error::Data(format!(
            "ground truth in {} at {}s has class {} outside 1..={k}",
            g.video_id, g.as_time, g.action_class
        )));
    }
    Ok(())
}

/// Per-class matchings for every offset, in (offset, class) order.
fn class_matchings(
    preds: &[ASPrediction],
    gts: &[ASGroundTruth],
    cfg: &EvalConfig,
) -> Vec<(f64, ClassId, Matching)> {
    let mut out = Vec::new();
    for &offset in &cfg.offset_thresholds {
        for class in 1..=cfg.num_classes as ClassId {
            let p: Vec<ASPrediction> = preds
                .iter()
                .filter(|p| p.action_class == class)
                .cloned()
                .collect();
            let g: Vec<ASGroundTruth> = gts
                .iter()
                .filter(|g| g.action_class == class)
                .cloned()
                .collect();
            out.push((offset, class, match_predictions(&p, &g, offset)));
        }
    }
    out
}

/// Runs the full protocol.
pub fn evaluate(preds: &[ASPrediction], gts: &[ASGroundTruth], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    check_inputs(preds, gts, cfg.num_classes)?;

    let mut per_class_ap = Vec::new();
    let mut counts = Vec::new();
    let mut map_per_offset = Vec::new();
    for chunk in class_matchings(preds, gts, cfg).chunks(cfg.num_classes) {
        let offset = chunk[0].0;
        let mut sum = 0.0;
        let mut classes_with_gt = 0usize;
        for (_, class, m) in chunk {
            let ap = average_precision(&m.flags, m.num_gt, cfg.ap_depth);
            if m.num_gt > 0 {
                sum += ap;
                classes_with_gt += 1;
            }
            per_class_ap.push(ClassAp {
                class: *class,
                offset,
                ap,
            });
            counts.push(ClassCounts {
                class: *class,
                offset: OrderedOffset(offset),
                num_gt: m.num_gt,
                true_positives: m.true_positives(),
                false_positives: m.false_positives(),
            });
        }
        let map = if classes_with_gt == 0 {
            0.0
        } else {
            sum / classes_with_gt as f64
        };
        map_per_offset.push(OffsetMap { offset, map });
    }
    let average_map =
        map_per_offset.iter().map(|m| m.map).sum::<f64>() / map_per_offset.len() as f64;
    Ok(EvalReport {
        ap_depth: cfg.ap_depth,
        per_class_ap,
        map_per_offset,
        average_map,
        counts,
    })
}

/// Precision/recall points of every (offset, class) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub offset: f64,
    pub class: ClassId,
    pub recall: f64,
    pub precision: f64,
}

pub fn precision_recall_curves(
    preds: &[ASPrediction],
    gts: &[ASGroundTruth],
    cfg: &EvalConfig,
) -> Result<Vec<CurvePoint>> {
    cfg.validate()?;
    check_inputs(preds, gts, cfg.num_classes)?;
    let mut out = Vec::new();
    for (offset, class, m) in class_matchings(preds, gts, cfg) {
        for (recall, precision) in precision_recall_curve(&m.flags, m.num_gt) {
            out.push(CurvePoint {
                offset,
                class,
                recall,
                precision,
            });
        }
    }
    Ok(out)
}

/// Writes `offset,class,recall,precision` rows.
pub fn write_curves_csv<W: Write>(mut w: W, points: &[CurvePoint]) -> Result<()> {
    writeln!(w, "offset,class,recall,precision")?;
    for p in points {
        writeln!(w, "{},{},{:.6},{:.6}", p.offset, p.class, p.recall, p.precision)?;
    }
    Ok(())
}

pub fn report_to_json(report: &EvalReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

pub fn write_report(path: impl AsRef<Path>, report: &EvalReport) -> Result<()> {
    std::fs::write(path, report_to_json(report)?)?;
    Ok(())
}
