//! Training-free re-scoring of detections with the co-occurrence prior.
//!
//! For detection `i`, the class distributions of the *other* detections are
//! pooled per band (weighted by their band association), normalized, and
//! propagated through that band's graph. The per-band results are mixed with
//! detection `i`'s own association weights into a prior `q_i`, and the new
//! distribution is the geometric blend
//!
//! ```text
//! s'_i ∝ s_i^(1 - lambda) * q_i^lambda
//! ```
//!
//! A band whose leave-one-out context mass is below `epsilon` contributes the
//! uniform distribution. A detection with no context in any band keeps its
//! logits unchanged.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::conditioning::{associate_centers, AssociationMatrix, AssociationPolicy};
use crate::error::{Error, Result};
use crate::files;
use crate::ingest::Corpus;
use crate::layout::{LayoutDocument, ProposalBatch};
use crate::matrix::{row_softmax, Matrix};
use crate::prior::CoOccurrenceGraphSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescoreConfig {
    lambda: f64,
    pub association: AssociationPolicy,
    epsilon: f64,
}

impl Default for RescoreConfig {
    fn default() -> Self {
        RescoreConfig {
            lambda: 0.5,
            association: AssociationPolicy::default(),
            epsilon: 1e-6,
        }
    }
}

impl RescoreConfig {
    pub fn new(lambda: f64, association: AssociationPolicy, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Invalid(format!("lambda {lambda} outside [0, 1]")));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Invalid(format!("epsilon {epsilon} outside (0, 1)")));
        }
        Ok(RescoreConfig {
            lambda,
            association,
            epsilon,
        })
    }

    pub fn with_lambda(lambda: f64) -> Result<Self> {
        let d = RescoreConfig::default();
        RescoreConfig::new(lambda, d.association, d.epsilon)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// Leave-one-out graph prior for every detection; `None` where a detection
/// has no context in any of its bands.
pub fn propagated_prior(
    dists: &Matrix,
    alpha: &AssociationMatrix,
    graphs: &CoOccurrenceGraphSet,
    epsilon: f64,
) -> Result<Vec<Option<Vec<f64>>>> {
    let (n, c) = dists.shape();
    if c != graphs.n_classes() {
        return Err(Error::shape(
            "distributions vs graphs",
            dists.shape(),
            (c, graphs.n_classes()),
        ));
    }
    if alpha.n_proposals() != n || alpha.n_graphs() != graphs.n_graphs() {
        return Err(Error::shape(
            "alpha vs detections",
            alpha.matrix().shape(),
            (n, graphs.n_graphs()),
        ));
    }
    let uniform = 1.0 / c as f64;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut q = vec![0.0; c];
        let mut has_context = false;
        for (j, edges) in graphs.edges.iter().enumerate() {
            let weight = alpha.get(i, j);
            if weight == 0.0 {
                continue;
            }
            let mut ctx = vec![0.0; c];
            for k in (0..n).filter(|&k| k != i) {
                let a = alpha.get(k, j);
                for (x, &s) in ctx.iter_mut().zip(dists.row(k)) {
                    *x += a * s;
                }
            }
            let mass: f64 = ctx.iter().sum();
            if mass < epsilon {
                q.iter_mut().for_each(|v| *v += weight * uniform);
                continue;
            }
            has_context = true;
            ctx.iter_mut().for_each(|v| *v /= mass);
            for (m, qm) in q.iter_mut().enumerate() {
                let propagated: f64 = edges.row(m).iter().zip(&ctx).map(|(e, x)| e * x).sum();
                *qm += weight * propagated;
            }
        }
        if !has_context {
            out.push(None);
            continue;
        }
        normalize_floored(&mut q, epsilon);
        out.push(Some(q));
    }
    Ok(out)
}

fn normalize_floored(v: &mut [f64], floor: f64) {
    let sum: f64 = v.iter().sum();
    if sum > 0.0 {
        v.iter_mut().for_each(|x| *x /= sum);
    } else {
        let u = 1.0 / v.len() as f64;
        v.fill(u);
    }
    v.iter_mut().for_each(|x| *x = x.max(floor));
    let sum: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= sum);
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// Re-scores one layout's detections. Boxes are untouched; the returned
/// logits are log-probabilities of the blended distributions. With
/// `lambda == 0` the input logits are returned unchanged.
pub fn rescore(
    detections: &ProposalBatch,
    graphs: &CoOccurrenceGraphSet,
    config: &RescoreConfig,
) -> Result<ProposalBatch> {
    if detections.logits.cols() != graphs.n_classes() {
        return Err(Error::Invalid(format!(
            "detections have {} classes but the graphs have {}",
            detections.logits.cols(),
            graphs.n_classes()
        )));
    }
    if config.lambda == 0.0 {
        return Ok(detections.clone());
    }
    let alpha = associate_centers(
        &detections.normalized_centers(),
        &graphs.bands(),
        config.association,
    )?;
    let dists = row_softmax(&detections.logits);
    let priors = propagated_prior(&dists, &alpha, graphs, config.epsilon)?;

    let lambda = config.lambda;
    let mut logits = detections.logits.clone();
    for (i, prior) in priors.iter().enumerate() {
        let Some(q) = prior else { continue };
        let log_s = log_softmax_row(detections.logits.row(i));
        let blended: Vec<f64> = log_s
            .iter()
            .zip(q)
            .map(|(&ls, &qc)| (1.0 - lambda) * ls + lambda * qc.ln())
            .collect();
        logits
            .row_mut(i)
            .copy_from_slice(&log_softmax_row(&blended));
    }
    ProposalBatch::new(
        detections.layout_id.clone(),
        detections.boxes.clone(),
        logits,
        detections.features.clone(),
        detections.layout_height,
    )
}

/// Per-layout logits (rows follow the layout's component order), keyed by
/// layout id. Stored as a JSON object of MTX-JSON matrices.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct LogitsSidecar(pub BTreeMap<String, Matrix>);

impl LogitsSidecar {
    pub fn load(path: &Path) -> Result<Self> {
        files::read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        files::write_json(path, self)
    }

    pub fn get(&self, layout_id: &str) -> Option<&Matrix> {
        self.0.get(layout_id)
    }
}

/// Logits for a labeled detection: the labeled class gets probability
/// `score` (1 when absent), the rest share the remainder evenly.
pub fn logits_from_label(
    class_id: usize,
    score: Option<f64>,
    n_classes: usize,
    epsilon: f64,
) -> Vec<f64> {
    if n_classes == 1 {
        return vec![0.0];
    }
    let p = score.unwrap_or(1.0).clamp(epsilon, 1.0 - epsilon);
    let rest = ((1.0 - p) / (n_classes - 1) as f64).ln();
    (0..n_classes)
        .map(|c| if c == class_id { p.ln() } else { rest })
        .collect()
}

fn layout_logits(
    layout: &LayoutDocument,
    sidecar: Option<&LogitsSidecar>,
    n_classes: usize,
    epsilon: f64,
) -> Result<Matrix> {
    if let Some(m) = sidecar.and_then(|s| s.get(&layout.id)) {
        if m.shape() != (layout.components.len(), n_classes) {
            return Err(Error::shape(
                format!("logits sidecar for layout {:?}", layout.id),
                m.shape(),
                (layout.components.len(), n_classes),
            ));
        }
        return Ok(m.clone());
    }
    let rows: Vec<Vec<f64>> = layout
        .components
        .iter()
        .map(|c| logits_from_label(c.class_id, c.score, n_classes, epsilon))
        .collect();
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, n_classes));
    }
    Matrix::from_rows(&rows)
}

/// Re-scores every layout of a detection corpus. Each output component takes
/// the argmax class of its blended distribution and that class's probability
/// as score. Returns the corpus and the blended log-probabilities.
pub fn rescore_corpus(
    detections: &Corpus,
    sidecar: Option<&LogitsSidecar>,
    graphs: &CoOccurrenceGraphSet,
    config: &RescoreConfig,
) -> Result<(Corpus, LogitsSidecar)> {
    if detections.vocabulary != graphs.vocabulary {
        return Err(Error::Invalid(
            "detection vocabulary does not match the graph vocabulary".into(),
        ));
    }
    let n_classes = graphs.n_classes();
    let results: Vec<(LayoutDocument, Matrix)> = detections
        .layouts
        .par_iter()
        .map(|layout| {
            let logits = layout_logits(layout, sidecar, n_classes, config.epsilon)?;
            let batch = ProposalBatch::new(
                layout.id.clone(),
                layout.boxes(),
                logits,
                None,
                layout.height,
            )?;
            let out = rescore(&batch, graphs, config)?;
            let probs = row_softmax(&out.logits);
            let mut rescored = layout.clone();
            for (comp, row) in rescored.components.iter_mut().zip(probs.row_iter()) {
                let mut best = 0;
                for (c, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = c;
                    }
                }
                comp.class_id = best;
                comp.score = Some(row[best].clamp(0.0, 1.0));
            }
            Ok((rescored, out.logits))
        })
        .collect::<Result<_>>()?;
    let mut out_logits = BTreeMap::new();
    let mut layouts = Vec::with_capacity(results.len());
    for (layout, logits) in results {
        out_logits.insert(layout.id.clone(), logits);
        layouts.push(layout);
    }
    let corpus = Corpus::new(
        detections.vocabulary.clone(),
        layouts,
        format!("rescored {}", detections.source),
    )?;
    Ok((corpus, LogitsSidecar(out_logits)))
}
