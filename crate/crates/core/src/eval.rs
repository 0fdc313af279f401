//! COCO-style box detection evaluation.
//!
//! Follows the reference protocol: per image and class, detections are
//! sorted by descending score (stable), capped at the largest `max_dets`,
//! and greedily matched to the best still-unmatched ground truth with
//! IoU at or above the threshold. Precision is made monotone from the right
//! and sampled at 101 recall points. Ground truth outside an area range is
//! ignored, as are unmatched detections outside it and detections matched
//! to ignored ground truth.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::Corpus;
use crate::layout::{iou, BBox};

/// Returned for slices without any ground truth.
pub const SENTINEL: f64 = -1.0;

/// `num` evenly spaced values from `start` to `stop` inclusive, computed the
/// way numpy's `linspace` does so threshold comparisons agree bit-for-bit.
pub fn linspace(start: f64, stop: f64, num: usize) -> Vec<f64> {
    if num == 0 {
        return Vec::new();
    }
    if num == 1 {
        return vec![start];
    }
    let step = (stop - start) / (num - 1) as f64;
    let mut v: Vec<f64> = (0..num).map(|i| i as f64 * step + start).collect();
    v[num - 1] = stop;
    v
}

/// Half-open area interval `[lo, hi)` in square pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct AreaRange {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl AreaRange {
    pub fn new(name: &str, lo: f64, hi: f64) -> Self {
        AreaRange {
            name: name.to_string(),
            lo,
            hi,
        }
    }

    pub fn contains(&self, area: f64) -> bool {
        self.lo <= area && area < self.hi
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub recall_points: Vec<f64>,
    /// Must start with `all`, `small`, `medium`, `large` for the report.
    pub area_ranges: Vec<AreaRange>,
    /// Must be `[1, 10, 100]`-shaped (three ascending caps) for the report.
    pub max_dets: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_thresholds: linspace(0.5, 0.95, 10),
            recall_points: linspace(0.0, 1.0, 101),
            area_ranges: vec![
                AreaRange::new("all", 0.0, f64::INFINITY),
                AreaRange::new("small", 0.0, 32.0 * 32.0),
                AreaRange::new("medium", 32.0 * 32.0, 96.0 * 96.0),
                AreaRange::new("large", 96.0 * 96.0, f64::INFINITY),
            ],
            max_dets: vec![1, 10, 100],
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        let t = &self.iou_thresholds;
        if t.is_empty() || t.windows(2).any(|w| w[0] >= w[1]) || t[0] <= 0.0 || t[t.len() - 1] > 1.0
        {
            return Err(Error::Invalid(
                "IoU thresholds must be strictly increasing in (0, 1]".into(),
            ));
        }
        if self.recall_points.is_empty() {
            return Err(Error::Invalid("no recall sampling points".into()));
        }
        if self.area_ranges.len() != 4
            || self.max_dets.len() != 3
            || self.max_dets.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::Invalid(
                "expected 4 area ranges (all, small, medium, large) and 3 ascending detection caps"
                    .into(),
            ));
        }
        Ok(())
    }

    fn threshold_index(&self, value: f64) -> Option<usize> {
        self.iou_thresholds
            .iter()
            .position(|&t| (t - value).abs() < 1e-9)
    }
}

/// The twelve-number summary. Values are in [0, 1] or [`SENTINEL`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricBlock {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub ap_small: f64,
    pub ap_medium: f64,
    pub ap_large: f64,
    pub ar1: f64,
    pub ar10: f64,
    pub ar100: f64,
    pub ar_small: f64,
    pub ar_medium: f64,
    pub ar_large: f64,
}

impl MetricBlock {
    pub const FIELD_NAMES: [&'static str; 12] = [
        "ap",
        "ap50",
        "ap75",
        "ap_small",
        "ap_medium",
        "ap_large",
        "ar1",
        "ar10",
        "ar100",
        "ar_small",
        "ar_medium",
        "ar_large",
    ];

    pub fn values(&self) -> [f64; 12] {
        [
            self.ap,
            self.ap50,
            self.ap75,
            self.ap_small,
            self.ap_medium,
            self.ap_large,
            self.ar1,
            self.ar10,
            self.ar100,
            self.ar_small,
            self.ar_medium,
            self.ar_large,
        ]
    }

    fn from_values(v: [f64; 12]) -> Self {
        MetricBlock {
            ap: v[0],
            ap50: v[1],
            ap75: v[2],
            ap_small: v[3],
            ap_medium: v[4],
            ap_large: v[5],
            ar1: v[6],
            ar10: v[7],
            ar100: v[8],
            ar_small: v[9],
            ar_medium: v[10],
            ar_large: v[11],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class: String,
    #[serde(flatten)]
    pub metrics: MetricBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub metrics: MetricBlock,
    pub per_class: Vec<ClassMetrics>,
}

impl EvalReport {
    /// Fixed-width table: metric, IoU and maxDets header rows, then the
    /// values in percent. Sentinel values print as `-`.
    pub fn to_table(&self, label: &str) -> String {
        const METRIC: [&str; 12] = [
            "AP", "AP50", "AP75", "APs", "APm", "APl", "AR", "AR", "AR", "ARs", "ARm", "ARl",
        ];
        const IOU: [&str; 12] = [
            "0.5:95", "0.5", "0.75", "0.5:95", "0.5:95", "0.5:95", "0.5:95", "0.5:95", "0.5:95",
            "0.5:95", "0.5:95", "0.5:95",
        ];
        const DETS: [&str; 12] = [
            "100", "100", "100", "100", "100", "100", "1", "10", "100", "100", "100", "100",
        ];
        let name_width = label.len().max("maxDets".len());
        let mut out = String::new();
        let mut header = |first: &str, cells: &[&str; 12]| {
            let _ = write!(out, "{first:<name_width$}");
            for cell in cells {
                let _ = write!(out, " {cell:>7}");
            }
            out.push('\n');
        };
        header("Method", &METRIC);
        header("@IoU", &IOU);
        header("maxDets", &DETS);
        let _ = write!(out, "{label:<name_width$}");
        for v in self.metrics.values() {
            if v == SENTINEL {
                let _ = write!(out, " {:>7}", "-");
            } else {
                let _ = write!(out, " {:>7.1}", 100.0 * v);
            }
        }
        out.push('\n');
        out
    }
}

/// A scored detection box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub bbox: BBox,
    pub score: f64,
}

/// Stable descending-score order.
fn score_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Greedy matching of one image/class slice at one threshold. Inputs must
/// already be in evaluation order (detections by score, ground truth with
/// non-ignored first). Returns the matched ground-truth index per detection.
fn greedy_match(ious: &[Vec<f64>], gt_ignore: &[bool], threshold: f64) -> Vec<Option<usize>> {
    let mut gt_taken = vec![false; gt_ignore.len()];
    let mut matches = Vec::with_capacity(ious.len());
    for row in ious {
        let mut best_iou = threshold.min(1.0 - 1e-10);
        let mut best: Option<usize> = None;
        for (g, &v) in row.iter().enumerate() {
            if gt_taken[g] {
                continue;
            }
            // Once a real match is held, never trade it for an ignored one.
            if let Some(m) = best {
                if !gt_ignore[m] && gt_ignore[g] {
                    break;
                }
            }
            if v < best_iou {
                continue;
            }
            best_iou = v;
            best = Some(g);
        }
        if let Some(g) = best {
            gt_taken[g] = true;
        }
        matches.push(best);
    }
    matches
}

/// TP/FP flag per detection, in descending-score order after truncation to
/// `max_dets`.
pub fn match_detections(
    dets: &[ScoredBox],
    gts: &[BBox],
    iou_threshold: f64,
    max_dets: usize,
) -> Vec<bool> {
    let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
    let mut order = score_order(&scores);
    order.truncate(max_dets);
    let ious: Vec<Vec<f64>> = order
        .iter()
        .map(|&d| gts.iter().map(|g| iou(&dets[d].bbox, g)).collect())
        .collect();
    greedy_match(&ious, &vec![false; gts.len()], iou_threshold)
        .into_iter()
        .map(|m| m.is_some())
        .collect()
}

/// Interpolated precision at the recall points from cumulative counts.
/// `None` when there is no ground truth.
fn sampled_precision(
    tp_cum: &[f64],
    fp_cum: &[f64],
    n_gt: usize,
    recall_points: &[f64],
) -> Option<(Vec<f64>, f64)> {
    if n_gt == 0 {
        return None;
    }
    let n = n_gt as f64;
    let recall: Vec<f64> = tp_cum.iter().map(|tp| tp / n).collect();
    let mut precision: Vec<f64> = tp_cum
        .iter()
        .zip(fp_cum)
        .map(|(tp, fp)| tp / (tp + fp + f64::EPSILON))
        .collect();
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }
    let mut sampled = vec![0.0; recall_points.len()];
    for (slot, &r) in sampled.iter_mut().zip(recall_points) {
        let idx = recall.partition_point(|&x| x < r);
        match precision.get(idx) {
            Some(&p) => *slot = p,
            None => break,
        }
    }
    let final_recall = recall.last().copied().unwrap_or(0.0);
    Some((sampled, final_recall))
}

/// 101-point interpolated precision for TP/FP flags in score order.
pub fn precision_recall(flags: &[bool], n_gt: usize) -> Option<Vec<f64>> {
    let (tp, fp) = cumulative(flags.iter().map(|&f| (f, false)));
    sampled_precision(&tp, &fp, n_gt, &linspace(0.0, 1.0, 101)).map(|(p, _)| p)
}

/// Mean of [`precision_recall`], or [`SENTINEL`] without ground truth.
pub fn average_precision(flags: &[bool], n_gt: usize) -> f64 {
    precision_recall(flags, n_gt).map_or(SENTINEL, |p| mean(&p))
}

fn cumulative(flags: impl Iterator<Item = (bool, bool)>) -> (Vec<f64>, Vec<f64>) {
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut tps = Vec::new();
    let mut fps = Vec::new();
    for (matched, ignored) in flags {
        if !ignored {
            if matched {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
        }
        tps.push(tp);
        fps.push(fp);
    }
    (tps, fps)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Per image, class and area range: detections in score order with their
/// match and ignore flags per threshold.
struct SliceEval {
    scores: Vec<f64>,
    matched: Vec<Vec<bool>>,
    ignored: Vec<Vec<bool>>,
    n_gt: usize,
}

fn evaluate_slice(
    dets: &[ScoredBox],
    gts: &[BBox],
    area: &AreaRange,
    config: &EvalConfig,
    max_det: usize,
) -> SliceEval {
    let gt_ignore_raw: Vec<bool> = gts.iter().map(|g| !area.contains(g.area())).collect();
    // Non-ignored ground truth first, stable.
    let mut gt_order: Vec<usize> = (0..gts.len()).collect();
    gt_order.sort_by_key(|&g| gt_ignore_raw[g]);
    let gt_ignore: Vec<bool> = gt_order.iter().map(|&g| gt_ignore_raw[g]).collect();

    let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
    let mut det_order = score_order(&scores);
    det_order.truncate(max_det);
    let ious: Vec<Vec<f64>> = det_order
        .iter()
        .map(|&d| {
            gt_order
                .iter()
                .map(|&g| iou(&dets[d].bbox, &gts[g]))
                .collect()
        })
        .collect();

    let mut matched = Vec::with_capacity(config.iou_thresholds.len());
    let mut ignored = Vec::with_capacity(config.iou_thresholds.len());
    for &t in &config.iou_thresholds {
        let m = greedy_match(&ious, &gt_ignore, t);
        matched.push(m.iter().map(Option::is_some).collect());
        ignored.push(
            m.iter()
                .zip(&det_order)
                .map(|(mg, &d)| match mg {
                    Some(g) => gt_ignore[*g],
                    None => !area.contains(dets[d].bbox.area()),
                })
                .collect(),
        );
    }
    SliceEval {
        scores: det_order.iter().map(|&d| scores[d]).collect(),
        matched,
        ignored,
        n_gt: gt_ignore.iter().filter(|&&ig| !ig).count(),
    }
}

/// precision[t][r] and recall[t] for one class/area/cap, pooled over images.
fn accumulate_slices(
    slices: &[SliceEval],
    max_det: usize,
    config: &EvalConfig,
) -> Option<(Vec<Vec<f64>>, Vec<f64>)> {
    let n_gt: usize = slices.iter().map(|s| s.n_gt).sum();
    if n_gt == 0 {
        return None;
    }
    // (image, position) of every kept detection, concatenated in image order.
    let mut pooled: Vec<(usize, usize)> = Vec::new();
    let mut scores = Vec::new();
    for (img, s) in slices.iter().enumerate() {
        for d in 0..s.scores.len().min(max_det) {
            pooled.push((img, d));
            scores.push(s.scores[d]);
        }
    }
    let order = score_order(&scores);
    let mut precision = Vec::with_capacity(config.iou_thresholds.len());
    let mut recall = Vec::with_capacity(config.iou_thresholds.len());
    for t in 0..config.iou_thresholds.len() {
        let (tp, fp) = cumulative(order.iter().map(|&p| {
            let (img, d) = pooled[p];
            (slices[img].matched[t][d], slices[img].ignored[t][d])
        }));
        let (sampled, rc) = sampled_precision(&tp, &fp, n_gt, &config.recall_points)?;
        precision.push(sampled);
        recall.push(rc);
    }
    Some((precision, recall))
}

/// Precision per threshold and recall point, and final recall per threshold.
type Curves = (Vec<Vec<f64>>, Vec<f64>);

/// Evaluates a detection corpus against ground truth.
pub fn evaluate(dets: &Corpus, gts: &Corpus, config: &EvalConfig) -> Result<EvalReport> {
    config.validate()?;
    if dets.vocabulary != gts.vocabulary {
        return Err(Error::Invalid(
            "detection and ground-truth vocabularies differ".into(),
        ));
    }
    let det_index: HashMap<&str, usize> = dets
        .layouts
        .iter()
        .enumerate()
        .map(|(i, l)| (l.id.as_str(), i))
        .collect();
    let gt_ids: std::collections::HashSet<&str> =
        gts.layouts.iter().map(|l| l.id.as_str()).collect();
    let mut missing_dets: Vec<&str> = gt_ids
        .iter()
        .filter(|id| !det_index.contains_key(*id))
        .copied()
        .collect();
    let mut missing_gts: Vec<&str> = det_index
        .keys()
        .filter(|id| !gt_ids.contains(*id))
        .copied()
        .collect();
    if !missing_dets.is_empty() || !missing_gts.is_empty() {
        missing_dets.sort_unstable();
        missing_gts.sort_unstable();
        return Err(Error::Invalid(format!(
            "layout id sets differ; missing from detections: [{}]; missing from ground truth: [{}]",
            missing_dets.join(", "),
            missing_gts.join(", ")
        )));
    }

    let n_classes = gts.vocabulary.len();
    let n_areas = config.area_ranges.len();
    let cap = *config.max_dets.last().expect("validated");

    // slices[class][area][image]
    let mut slices: Vec<Vec<Vec<SliceEval>>> = (0..n_classes)
        .map(|_| {
            (0..n_areas)
                .map(|_| Vec::with_capacity(gts.len()))
                .collect()
        })
        .collect();
    for gt_layout in &gts.layouts {
        let det_layout = &dets.layouts[det_index[gt_layout.id.as_str()]];
        for (k, class_slices) in slices.iter_mut().enumerate() {
            let g: Vec<BBox> = gt_layout
                .components
                .iter()
                .filter(|c| c.class_id == k)
                .map(|c| c.bbox)
                .collect();
            let d: Vec<ScoredBox> = det_layout
                .components
                .iter()
                .filter(|c| c.class_id == k)
                .map(|c| ScoredBox {
                    bbox: c.bbox,
                    score: c.score.unwrap_or(1.0),
                })
                .collect();
            for (a, area) in config.area_ranges.iter().enumerate() {
                class_slices[a].push(evaluate_slice(&d, &g, area, config, cap));
            }
        }
    }

    // acc[class][area][cap]
    let acc: Vec<Vec<Vec<Option<Curves>>>> = slices
        .iter()
        .map(|per_area| {
            per_area
                .iter()
                .map(|per_image| {
                    config
                        .max_dets
                        .iter()
                        .map(|&m| accumulate_slices(per_image, m, config))
                        .collect()
                })
                .collect()
        })
        .collect();

    let classes: Vec<usize> = (0..n_classes).collect();
    let metrics = summarize(&acc, &classes, config);
    let per_class = classes
        .iter()
        .map(|&k| ClassMetrics {
            class: gts.vocabulary.names()[k].clone(),
            metrics: summarize(&acc, &[k], config),
        })
        .collect();
    Ok(EvalReport { metrics, per_class })
}

type Accumulated = Vec<Vec<Vec<Option<(Vec<Vec<f64>>, Vec<f64>)>>>>;

fn summarize(acc: &Accumulated, classes: &[usize], config: &EvalConfig) -> MetricBlock {
    let top = config.max_dets.len() - 1;
    let all_t: Vec<usize> = (0..config.iou_thresholds.len()).collect();
    let single = |v: f64| {
        config
            .threshold_index(v)
            .map(|t| vec![t])
            .unwrap_or_default()
    };

    let ap = |area: usize, thresholds: &[usize]| -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for &k in classes {
            if let Some((precision, _)) = &acc[k][area][top] {
                for &t in thresholds {
                    sum += precision[t].iter().sum::<f64>();
                    n += precision[t].len();
                }
            }
        }
        if n == 0 {
            SENTINEL
        } else {
            sum / n as f64
        }
    };
    let ar = |area: usize, cap: usize| -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for &k in classes {
            if let Some((_, recall)) = &acc[k][area][cap] {
                sum += recall.iter().sum::<f64>();
                n += recall.len();
            }
        }
        if n == 0 {
            SENTINEL
        } else {
            sum / n as f64
        }
    };
    MetricBlock::from_values([
        ap(0, &all_t),
        ap(0, &single(0.5)),
        ap(0, &single(0.75)),
        ap(1, &all_t),
        ap(2, &all_t),
        ap(3, &all_t),
        ar(0, 0),
        ar(0, 1),
        ar(0, top),
        ar(1, top),
        ar(2, top),
        ar(3, top),
    ])
}
