//! Synthetic layout corpora drawn from planted per-band compatibility graphs.
//!
//! Randomness comes from ChaCha20 (`rand_chacha::ChaCha20Rng`, RFC 8439
//! keystream) seeded with `seed_from_u64(seed)`. Layout `i` draws its
//! geometry and clean labels from stream `2i` and its label noise from stream
//! `2i + 1`, so any layout can be regenerated independently of the others.
//!
//! Within each band the first class is drawn from the band marginal; each
//! further class is drawn with weight `sum over already drawn m of E[m][c]`.
//! Box centers are placed strictly inside their band.

use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::files;
use crate::ingest::Corpus;
use crate::layout::{BBox, ClassVocabulary, LayoutDocument};
use crate::matrix::{softmax_in_place, Matrix};
use crate::prior::{BandConfig, CoOccurrenceGraphSet};
use crate::rescore::LogitsSidecar;

/// Fraction of the band height kept clear at each band edge when placing
/// centers, so rounding never moves a center across a boundary.
const EDGE_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub classes: Vec<String>,
    /// One symmetric C x C matrix per band, entries in [0, 1], unit diagonal.
    pub planted_graphs: Vec<Matrix>,
    /// One class distribution per band.
    pub class_marginals: Vec<Vec<f64>>,
    /// Inclusive range of boxes drawn per band.
    pub boxes_per_band: [usize; 2],
    /// Box width range in pixels.
    pub box_width: [f64; 2],
    /// Box height range in pixels (capped so the box fits the canvas).
    pub box_height: [f64; 2],
    /// `[width, height]` in pixels.
    pub canvas: [f64; 2],
    /// Label-flip probability.
    pub noise: f64,
    pub seed: u64,
}

fn check_range(name: &str, [lo, hi]: [f64; 2]) -> Result<()> {
    if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::Invalid(format!(
            "{name} range [{lo}, {hi}] is invalid"
        )));
    }
    Ok(())
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        let vocab = ClassVocabulary::new(self.classes.iter().cloned())?;
        let c = vocab.len();
        let n_b = self.planted_graphs.len();
        if n_b == 0 {
            return Err(Error::Invalid(
                "generator needs at least one planted graph".into(),
            ));
        }
        if self.class_marginals.len() != n_b {
            return Err(Error::Invalid(format!(
                "{} marginals for {n_b} planted graphs",
                self.class_marginals.len()
            )));
        }
        for (j, g) in self.planted_graphs.iter().enumerate() {
            if g.shape() != (c, c) {
                return Err(Error::shape(
                    format!("planted graph {j}"),
                    g.shape(),
                    (c, c),
                ));
            }
            for m in 0..c {
                if g[(m, m)] != 1.0 {
                    return Err(Error::Invalid(format!(
                        "planted graph {j} diagonal must be 1"
                    )));
                }
                for n in 0..c {
                    let v = g[(m, n)];
                    if !(0.0..=1.0).contains(&v) || (v - g[(n, m)]).abs() > 1e-12 {
                        return Err(Error::Invalid(format!(
                            "planted graph {j} must be symmetric with entries in [0, 1]"
                        )));
                    }
                }
            }
        }
        for (j, p) in self.class_marginals.iter().enumerate() {
            if p.len() != c
                || p.iter().any(|&v| v.is_nan() || v < 0.0)
                || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9
            {
                return Err(Error::Invalid(format!(
                    "marginal {j} is not a distribution over {c} classes"
                )));
            }
        }
        let [kmin, kmax] = self.boxes_per_band;
        if kmin > kmax {
            return Err(Error::Invalid(format!(
                "boxes per band range [{kmin}, {kmax}] is invalid"
            )));
        }
        check_range("box width", self.box_width)?;
        check_range("box height", self.box_height)?;
        let [w, h] = self.canvas;
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite()) {
            return Err(Error::Invalid(format!("canvas {w}x{h} must be positive")));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(Error::Invalid(format!(
                "noise {} outside [0, 1)",
                self.noise
            )));
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> Result<ClassVocabulary> {
        ClassVocabulary::new(self.classes.iter().cloned())
    }

    pub fn band_config(&self) -> Result<BandConfig> {
        BandConfig::non_overlapping(self.planted_graphs.len())
    }

    /// The planted graphs as a graph set over non-overlapping bands.
    pub fn planted_graph_set(&self) -> Result<CoOccurrenceGraphSet> {
        CoOccurrenceGraphSet::new(
            self.vocabulary()?,
            self.band_config()?,
            self.planted_graphs.clone(),
            None,
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let spec: GeneratorSpec = files::read_json(path)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        files::write_json(path, self)
    }

    /// Six classes over two bands: a header cluster on top, a content and
    /// footer cluster below, with weak links across.
    pub fn two_band_demo(seed: u64) -> Self {
        let top = [
            [1.0, 0.9, 0.6, 0.05, 0.0, 0.0],
            [0.9, 1.0, 0.5, 0.0, 0.05, 0.0],
            [0.6, 0.5, 1.0, 0.1, 0.0, 0.0],
            [0.05, 0.0, 0.1, 1.0, 0.2, 0.0],
            [0.0, 0.05, 0.0, 0.2, 1.0, 0.1],
            [0.0, 0.0, 0.0, 0.0, 0.1, 1.0],
        ];
        let bottom = [
            [1.0, 0.1, 0.0, 0.0, 0.0, 0.0],
            [0.1, 1.0, 0.2, 0.0, 0.05, 0.0],
            [0.0, 0.2, 1.0, 0.1, 0.0, 0.05],
            [0.0, 0.0, 0.1, 1.0, 0.5, 0.6],
            [0.0, 0.05, 0.0, 0.5, 1.0, 0.9],
            [0.0, 0.0, 0.05, 0.6, 0.9, 1.0],
        ];
        GeneratorSpec {
            classes: [
                "Toolbar",
                "Multi-Tab",
                "Icon",
                "List Item",
                "Text Button",
                "Advertisement",
            ]
            .map(String::from)
            .to_vec(),
            planted_graphs: vec![
                Matrix::from_rows(&top).expect("static"),
                Matrix::from_rows(&bottom).expect("static"),
            ],
            class_marginals: vec![
                vec![0.3, 0.25, 0.25, 0.1, 0.05, 0.05],
                vec![0.05, 0.05, 0.1, 0.25, 0.25, 0.3],
            ],
            boxes_per_band: [2, 6],
            box_width: [20.0, 300.0],
            box_height: [10.0, 150.0],
            canvas: [360.0, 640.0],
            noise: 0.3,
            seed,
        }
    }
}

fn layout_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn generate_layout(
    spec: &GeneratorSpec,
    bands: &[(f64, f64)],
    index: usize,
) -> Result<LayoutDocument> {
    let mut rng = layout_rng(spec.seed, 2 * index as u64);
    let [w, h] = spec.canvas;
    let mut layout = LayoutDocument::new(format!("synth-{index:06}"), w, h)?;
    let c = spec.classes.len();
    for (j, &(upper, lower)) in bands.iter().enumerate() {
        let graph = &spec.planted_graphs[j];
        let marginal = WeightedIndex::new(&spec.class_marginals[j])
            .map_err(|e| Error::Invalid(format!("marginal {j}: {e}")))?;
        let k = rng.random_range(spec.boxes_per_band[0]..=spec.boxes_per_band[1]);
        let mut drawn: Vec<usize> = Vec::with_capacity(k);
        for _ in 0..k {
            let class = if drawn.is_empty() {
                marginal.sample(&mut rng)
            } else {
                let weights: Vec<f64> = (0..c)
                    .map(|cls| drawn.iter().map(|&m| graph[(m, cls)]).sum())
                    .collect();
                match WeightedIndex::new(&weights) {
                    Ok(dist) => dist.sample(&mut rng),
                    Err(_) => marginal.sample(&mut rng),
                }
            };
            drawn.push(class);

            let margin = EDGE_MARGIN * (lower - upper);
            let cy = h * uniform(&mut rng, upper + margin, lower - margin);
            let max_h = 2.0 * cy.min(h - cy);
            let bh = uniform(&mut rng, spec.box_height[0], spec.box_height[1]).min(max_h);
            let bw = uniform(&mut rng, spec.box_width[0], spec.box_width[1]).min(w);
            let x1 = uniform(&mut rng, 0.0, w - bw);
            let bbox = BBox::new(x1, cy - bh / 2.0, x1 + bw, cy + bh / 2.0)?;
            layout.push(bbox, class, None);
        }
    }
    Ok(layout)
}

fn add_label_noise(spec: &GeneratorSpec, clean: &LayoutDocument, index: usize) -> LayoutDocument {
    let mut rng = layout_rng(spec.seed, 2 * index as u64 + 1);
    let mut noisy = clean.clone();
    let c = spec.classes.len();
    for comp in &mut noisy.components {
        // Always draw both values so the stream position does not depend on outcomes.
        let flip = rng.random::<f64>() < spec.noise;
        let replacement = rng.random_range(0..c);
        if flip {
            comp.class_id = replacement;
        }
    }
    noisy
}

/// Clean and label-noised corpora of `n_layouts` layouts.
pub fn generate(spec: &GeneratorSpec, n_layouts: usize) -> Result<(Corpus, Corpus)> {
    spec.validate()?;
    let vocabulary = spec.vocabulary()?;
    let bands = spec.band_config()?.bands();
    let mut clean = Vec::with_capacity(n_layouts);
    let mut noisy = Vec::with_capacity(n_layouts);
    for i in 0..n_layouts {
        let layout = generate_layout(spec, bands.bounds(), i)?;
        noisy.push(add_label_noise(spec, &layout, i));
        clean.push(layout);
    }
    let source = format!("synthetic seed={}", spec.seed);
    Ok((
        Corpus::new(vocabulary.clone(), clean, source.clone())?,
        Corpus::new(vocabulary, noisy, format!("{source} noise={}", spec.noise))?,
    ))
}

/// Turns labeled components into soft detections: logits are
/// `scale * onehot(label) + jitter * N(0, 1)`. Each component takes the
/// argmax class and its softmax probability as score.
pub fn soft_detections(
    labels: &Corpus,
    scale: f64,
    jitter: f64,
    seed: u64,
) -> Result<(Corpus, LogitsSidecar)> {
    let c = labels.vocabulary.len();
    let mut sidecar = LogitsSidecar::default();
    let mut layouts = Vec::with_capacity(labels.len());
    for (i, layout) in labels.layouts.iter().enumerate() {
        let mut rng = layout_rng(seed, i as u64);
        let mut rows = Vec::with_capacity(layout.components.len());
        let mut out = layout.clone();
        for comp in &mut out.components {
            let logits: Vec<f64> = (0..c)
                .map(|k| {
                    let base = if k == comp.class_id { scale } else { 0.0 };
                    base + jitter * rng.sample::<f64, _>(StandardNormal)
                })
                .collect();
            let mut probs = logits.clone();
            softmax_in_place(&mut probs);
            let best = (0..c).fold(0, |b, k| if probs[k] > probs[b] { k } else { b });
            comp.class_id = best;
            comp.score = Some(probs[best]);
            rows.push(logits);
        }
        let m = if rows.is_empty() {
            Matrix::zeros(0, c)
        } else {
            Matrix::from_rows(&rows)?
        };
        sidecar.0.insert(layout.id.clone(), m);
        layouts.push(out);
    }
    let corpus = Corpus::new(
        labels.vocabulary.clone(),
        layouts,
        format!("soft detections of {}", labels.source),
    )?;
    Ok((corpus, sidecar))
}

/// Mean over bands of the cosine similarity between the off-diagonal
/// entries of planted and recovered graphs. Bands where either side is all
/// zero are skipped; returns -1 when every band is skipped.
pub fn recovery_score(
    planted: &CoOccurrenceGraphSet,
    recovered: &CoOccurrenceGraphSet,
) -> Result<f64> {
    if planted.n_graphs() != recovered.n_graphs() || planted.n_classes() != recovered.n_classes() {
        return Err(Error::shape(
            "planted vs recovered graphs",
            (planted.n_graphs(), planted.n_classes()),
            (recovered.n_graphs(), recovered.n_classes()),
        ));
    }
    let c = planted.n_classes();
    let mut total = 0.0;
    let mut counted = 0usize;
    for (p, r) in planted.edges.iter().zip(&recovered.edges) {
        let (mut dot, mut pp, mut rr) = (0.0, 0.0, 0.0);
        for m in 0..c {
            for n in (0..c).filter(|&n| n != m) {
                let (a, b) = (p[(m, n)], r[(m, n)]);
                dot += a * b;
                pp += a * a;
                rr += b * b;
            }
        }
        if pp == 0.0 || rr == 0.0 {
            continue;
        }
        total += dot / (pp.sqrt() * rr.sqrt());
        counted += 1;
    }
    Ok(if counted == 0 {
        -1.0
    } else {
        total / counted as f64
    })
}
