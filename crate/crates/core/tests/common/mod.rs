//! Independent oracles and seeded input builders shared by integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use layout_prior::conditioning::{AssociationMatrix, NodeFeatures};
use layout_prior::layout::{BBox, ClassVocabulary, LayoutDocument};
use layout_prior::prior::BandConfig;
use layout_prior::{CoOccurrenceGraphSet, Corpus, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn vocab(c: usize) -> ClassVocabulary {
    ClassVocabulary::new((0..c).map(|i| format!("class{i}"))).unwrap()
}

/// Random corpus on an integer pixel grid: heights and box edges are whole
/// numbers, so every center height is a multiple of 1/2.
pub fn random_grid_corpus(
    rng: &mut ChaCha20Rng,
    max_layouts: usize,
    max_boxes: usize,
    c: usize,
) -> Corpus {
    let n_layouts = rng.random_range(0..=max_layouts);
    let layouts = (0..n_layouts)
        .map(|l| {
            let h = rng.random_range(10u32..=400);
            let w = rng.random_range(10u32..=400);
            let mut layout = LayoutDocument::new(format!("L{l}"), w as f64, h as f64).unwrap();
            for _ in 0..rng.random_range(0..=max_boxes) {
                let y1 = rng.random_range(0..=h);
                let y2 = rng.random_range(y1..=h);
                let x1 = rng.random_range(0..=w);
                let x2 = rng.random_range(x1..=w);
                let bbox = BBox::new(x1 as f64, y1 as f64, x2 as f64, y2 as f64).unwrap();
                layout.push(bbox, rng.random_range(0..c), None);
            }
            layout
        })
        .collect();
    Corpus::new(vocab(c), layouts, "grid").unwrap()
}

/// Exact band test in integers for bands of width `span / n_bands`:
/// band j covers `[j/n, min(j+span, n)/n)` of the height, and the bottom
/// edge belongs to the last band. `y2sum` is `y1 + y2` (twice the center).
fn in_band(y2sum: i64, height: i64, n_bands: i64, span: i64, j: i64) -> bool {
    let lo = j * 2 * height;
    let hi = (j + span).min(n_bands) * 2 * height;
    let scaled = n_bands * y2sum;
    (lo <= scaled && scaled < hi) || (scaled >= n_bands * 2 * height && j == n_bands - 1)
}

/// Counts by enumerating every (box, box, band) triple. Band width is
/// `span / n_bands` of the height; layouts must be on an integer grid.
pub fn brute_force_counts(corpus: &Corpus, n_bands: usize, span: usize) -> Vec<Vec<Vec<u64>>> {
    let c = corpus.vocabulary.len();
    let mut counts = vec![vec![vec![0u64; c]; c]; n_bands];
    for layout in &corpus.layouts {
        let height = layout.height as i64;
        let y2sums: Vec<i64> = layout
            .components
            .iter()
            .map(|comp| (comp.bbox.y1 + comp.bbox.y2) as i64)
            .collect();
        for (j, band_counts) in counts.iter_mut().enumerate() {
            let member =
                |i: usize| in_band(y2sums[i], height, n_bands as i64, span as i64, j as i64);
            let size = (0..y2sums.len()).filter(|&i| member(i)).count();
            if size < 2 {
                continue;
            }
            for i in 0..y2sums.len() {
                for k in 0..y2sums.len() {
                    if member(i) && member(k) {
                        band_counts[layout.components[i].class_id]
                            [layout.components[k].class_id] += 1;
                    }
                }
            }
        }
    }
    counts
}

pub fn band_config(n_bands: usize, span: usize) -> BandConfig {
    BandConfig::new(n_bands, span as f64 / n_bands as f64).unwrap()
}

/// `sum_j alpha[i][j] * sum_c s[i][c] * sum_m e_j[c][m] * sum_k n[m][k] * z[k][d]`
/// evaluated element by element.
pub fn condition_oracle(
    s: &Matrix,
    alpha: &Matrix,
    edges: &[Matrix],
    nodes: &Matrix,
    embed: &Matrix,
) -> Matrix {
    let (n_r, c) = s.shape();
    let (k_dim, d_prime) = embed.shape();
    let mut out = Matrix::zeros(n_r, d_prime);
    for i in 0..n_r {
        for d in 0..d_prime {
            let mut total = 0.0;
            for (j, e) in edges.iter().enumerate() {
                let mut band = 0.0;
                for cls in 0..c {
                    for m in 0..c {
                        let mut nz = 0.0;
                        for k in 0..k_dim {
                            nz += nodes[(m, k)] * embed[(k, d)];
                        }
                        band += s[(i, cls)] * e[(cls, m)] * nz;
                    }
                }
                total += alpha[(i, j)] * band;
            }
            out[(i, d)] = total;
        }
    }
    out
}

pub fn uniform_matrix(rng: &mut ChaCha20Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    Matrix::new(rows, cols, data).unwrap()
}

pub fn row_stochastic(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> Matrix {
    let mut m = uniform_matrix(rng, rows, cols, 0.01, 1.0);
    for i in 0..rows {
        let sum: f64 = m.row(i).iter().sum();
        m.row_mut(i).iter_mut().for_each(|v| *v /= sum);
    }
    m
}

/// Symmetric, entries in [0, 1], unit diagonal.
pub fn random_graph(rng: &mut ChaCha20Rng, c: usize) -> Matrix {
    let mut m = Matrix::identity(c);
    for a in 0..c {
        for b in (a + 1)..c {
            let v = rng.random_range(0.0..1.0);
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
    m
}

pub struct ConditionInputs {
    pub s: Matrix,
    pub alpha: AssociationMatrix,
    pub graphs: CoOccurrenceGraphSet,
    pub nodes: NodeFeatures,
    pub embed: Matrix,
}

pub fn random_condition_inputs(
    rng: &mut ChaCha20Rng,
    n_r: usize,
    c: usize,
    k: usize,
    d_prime: usize,
    n_g: usize,
) -> ConditionInputs {
    let s = row_stochastic(rng, n_r, c);
    let alpha = AssociationMatrix::new(row_stochastic(rng, n_r, n_g)).unwrap();
    let edges = (0..n_g).map(|_| random_graph(rng, c)).collect();
    let graphs = CoOccurrenceGraphSet::new(
        vocab(c),
        BandConfig::non_overlapping(n_g).unwrap(),
        edges,
        None,
    )
    .unwrap();
    let nodes = NodeFeatures::classifier_weights(uniform_matrix(rng, c, k, -1.0, 1.0));
    let embed = uniform_matrix(rng, k, d_prime, -1.0, 1.0);
    ConditionInputs {
        s,
        alpha,
        graphs,
        nodes,
        embed,
    }
}
