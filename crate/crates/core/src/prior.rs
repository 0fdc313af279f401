//! Band-partitioned co-occurrence graphs.
//!
//! Each layout is cut into horizontal bands (in units of its own height). A
//! component belongs to every band whose half-open interval
//! `[upper, lower)` contains its normalized center height; a center exactly
//! at the bottom edge belongs to the last band. Within a band holding at least
//! two components, every ordered pair of members (a member paired with
//! itself included) increments the edge between their classes. The counts
//! are then row-column normalized,
//!
//! ```text
//! e_mn := e_mn / sqrt(sum_n e_mn * sum_m e_mn)
//! ```
//!
//! with `0/0 := 0`, and every diagonal entry is set to 1.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::files;
use crate::ingest::Corpus;
use crate::layout::{ClassVocabulary, LayoutDocument};
use crate::matrix::Matrix;

pub const GRAPH_SCHEMA_VERSION: u32 = 1;

/// Bound gaps smaller than this are snapped shut so that consecutive
/// non-overlapping bands tile [0, 1] exactly.
const BOUND_SNAP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandConfig {
    n_bands: usize,
    band_width_frac: f64,
}

impl Default for BandConfig {
    fn default() -> Self {
        BandConfig::non_overlapping(10).expect("10 bands is valid")
    }
}

impl BandConfig {
    pub fn new(n_bands: usize, band_width_frac: f64) -> Result<Self> {
        if n_bands == 0 {
            return Err(Error::Invalid("number of bands must be at least 1".into()));
        }
        if !(band_width_frac > 0.0 && band_width_frac <= 1.0) {
            return Err(Error::Invalid(format!(
                "band width {band_width_frac} must lie in (0, 1]"
            )));
        }
        Ok(BandConfig {
            n_bands,
            band_width_frac,
        })
    }

    /// `n_bands` bands of width `1 / n_bands`.
    pub fn non_overlapping(n_bands: usize) -> Result<Self> {
        BandConfig::new(n_bands, 1.0 / n_bands.max(1) as f64)
    }

    pub fn n_bands(&self) -> usize {
        self.n_bands
    }

    pub fn band_width_frac(&self) -> f64 {
        self.band_width_frac
    }

    pub fn bands(&self) -> BandSet {
        let n = self.n_bands;
        let uppers: Vec<f64> = (0..n).map(|j| j as f64 / n as f64).collect();
        let bounds: Vec<(f64, f64)> = (0..n)
            .map(|j| {
                let upper = uppers[j];
                let mut lower = (upper + self.band_width_frac).min(1.0);
                // Snap onto the next band's upper bound or the bottom edge.
                for &target in uppers.iter().skip(j + 1).chain(std::iter::once(&1.0)) {
                    if (lower - target).abs() < BOUND_SNAP {
                        lower = target;
                    }
                }
                (upper, lower)
            })
            .collect();
        let centroids = bounds.iter().map(|&(u, l)| (u + l) / 2.0).collect();
        BandSet { bounds, centroids }
    }
}

/// Concrete band bounds in normalized height units.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSet {
    bounds: Vec<(f64, f64)>,
    centroids: Vec<f64>,
}

impl BandSet {
    pub fn len(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty()
    }

    /// `(upper, lower)` per band, ascending in `upper`.
    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    pub fn contains(&self, band: usize, y_norm: f64) -> bool {
        let (upper, lower) = self.bounds[band];
        (upper <= y_norm && y_norm < lower) || (y_norm >= 1.0 && band + 1 == self.len())
    }

    /// Bands containing a normalized center height.
    pub fn bands_of(&self, y_norm: f64) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&j| self.contains(j, y_norm))
    }
}

/// 0/1 membership of each component (rows) in each band (columns).
pub fn band_membership(layout: &LayoutDocument, config: &BandConfig) -> Vec<Vec<bool>> {
    let bands = config.bands();
    layout
        .components
        .iter()
        .map(|c| {
            let y = c.bbox.center_y() / layout.height;
            (0..bands.len()).map(|j| bands.contains(j, y)).collect()
        })
        .collect()
}

/// Square matrix of exact co-occurrence counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawCounts")]
pub struct CountMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u64>,
}

#[derive(Deserialize)]
struct RawCounts {
    rows: usize,
    cols: usize,
    data: Vec<u64>,
}

impl TryFrom<RawCounts> for CountMatrix {
    type Error = Error;

    fn try_from(raw: RawCounts) -> Result<Self> {
        if raw.rows != raw.cols || raw.rows * raw.cols != raw.data.len() {
            return Err(Error::Parse(format!(
                "count matrix {}x{} with {} values is not square and complete",
                raw.rows,
                raw.cols,
                raw.data.len()
            )));
        }
        Ok(CountMatrix {
            rows: raw.rows,
            cols: raw.cols,
            data: raw.data,
        })
    }
}

impl CountMatrix {
    pub fn zeros(n: usize) -> Self {
        CountMatrix {
            rows: n,
            cols: n,
            data: vec![0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Invalid("count matrix must be square".into()));
        }
        Ok(CountMatrix {
            rows: n,
            cols: n,
            data: rows.concat(),
        })
    }

    pub fn size(&self) -> usize {
        self.rows
    }

    pub fn get(&self, m: usize, n: usize) -> u64 {
        self.data[m * self.cols + n]
    }

    pub fn increment(&mut self, m: usize, n: usize) {
        self.data[m * self.cols + n] += 1;
    }

    pub fn total(&self) -> u64 {
        self.data.iter().sum()
    }

    fn add_assign(&mut self, other: &CountMatrix) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

fn check_class_ids(layout: &LayoutDocument, n_classes: usize) -> Result<()> {
    match layout.components.iter().find(|c| c.class_id >= n_classes) {
        Some(c) => Err(Error::Invalid(format!(
            "layout {:?}: class id {} out of range for {n_classes} classes",
            layout.id, c.class_id
        ))),
        None => Ok(()),
    }
}

fn accumulate_layout(layout: &LayoutDocument, bands: &BandSet, counts: &mut [CountMatrix]) {
    let centers: Vec<f64> = layout
        .components
        .iter()
        .map(|c| c.bbox.center_y() / layout.height)
        .collect();
    for (j, band_counts) in counts.iter_mut().enumerate() {
        let members: Vec<usize> = (0..centers.len())
            .filter(|&i| bands.contains(j, centers[i]))
            .collect();
        // Bands with fewer than two members carry no co-occurrence.
        if members.len() < 2 {
            continue;
        }
        for &i in &members {
            let li = layout.components[i].class_id;
            for &k in &members {
                band_counts.increment(li, layout.components[k].class_id);
            }
        }
    }
}

/// Raw per-band co-occurrence counts over a corpus.
pub fn accumulate(corpus: &Corpus, config: &BandConfig) -> Result<Vec<CountMatrix>> {
    let n_classes = corpus.vocabulary.len();
    let bands = config.bands();
    let mut counts = vec![CountMatrix::zeros(n_classes); config.n_bands()];
    for layout in &corpus.layouts {
        check_class_ids(layout, n_classes)?;
        accumulate_layout(layout, &bands, &mut counts);
    }
    Ok(counts)
}

/// Same result as [`accumulate`], computed with per-thread partial counts.
/// Integer sums commute, so the output is identical to the sequential one.
pub fn accumulate_parallel(corpus: &Corpus, config: &BandConfig) -> Result<Vec<CountMatrix>> {
    let n_classes = corpus.vocabulary.len();
    let bands = config.bands();
    let empty = || vec![CountMatrix::zeros(n_classes); config.n_bands()];
    corpus
        .layouts
        .par_iter()
        .try_fold(empty, |mut acc, layout| {
            check_class_ids(layout, n_classes)?;
            accumulate_layout(layout, &bands, &mut acc);
            Ok(acc)
        })
        .try_reduce(empty, |mut a, b| {
            for (x, y) in a.iter_mut().zip(&b) {
                x.add_assign(y);
            }
            Ok(a)
        })
}

/// Row-column normalization with unit diagonal.
pub fn normalize_counts(raw: &CountMatrix) -> Matrix {
    let n = raw.size();
    let row_sums: Vec<f64> = (0..n)
        .map(|m| (0..n).map(|k| raw.get(m, k) as f64).sum())
        .collect();
    let col_sums: Vec<f64> = (0..n)
        .map(|k| (0..n).map(|m| raw.get(m, k) as f64).sum())
        .collect();
    let mut out = Matrix::zeros(n, n);
    for m in 0..n {
        for k in 0..n {
            let e = raw.get(m, k) as f64;
            let denom = (row_sums[m] * col_sums[k]).sqrt();
            out[(m, k)] = if denom > 0.0 { e / denom } else { 0.0 };
        }
        out[(m, m)] = 1.0;
    }
    out
}

/// The learned prior: one normalized C x C graph per band.
#[derive(Debug, Clone, PartialEq)]
pub struct CoOccurrenceGraphSet {
    pub vocabulary: ClassVocabulary,
    pub band_config: BandConfig,
    pub edges: Vec<Matrix>,
    pub raw_counts: Option<Vec<CountMatrix>>,
}

impl CoOccurrenceGraphSet {
    /// Checks that there is one C x C graph per band with entries in [0, 1].
    pub fn new(
        vocabulary: ClassVocabulary,
        band_config: BandConfig,
        edges: Vec<Matrix>,
        raw_counts: Option<Vec<CountMatrix>>,
    ) -> Result<Self> {
        let c = vocabulary.len();
        if edges.len() != band_config.n_bands() {
            return Err(Error::Invalid(format!(
                "{} graphs for {} bands",
                edges.len(),
                band_config.n_bands()
            )));
        }
        for (j, e) in edges.iter().enumerate() {
            if e.shape() != (c, c) {
                return Err(Error::shape(
                    format!("graph {j} vs vocabulary"),
                    e.shape(),
                    (c, c),
                ));
            }
            if e.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Invalid(format!(
                    "graph {j} has entries outside [0, 1]"
                )));
            }
        }
        if let Some(raw) = &raw_counts {
            if raw.len() != edges.len() || raw.iter().any(|r| r.size() != c) {
                return Err(Error::Invalid(
                    "raw counts do not match graph shapes".into(),
                ));
            }
        }
        Ok(CoOccurrenceGraphSet {
            vocabulary,
            band_config,
            edges,
            raw_counts,
        })
    }

    pub fn n_graphs(&self) -> usize {
        self.edges.len()
    }

    pub fn n_classes(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn bands(&self) -> BandSet {
        self.band_config.bands()
    }

    /// Number of class pairs `m < n` with a nonzero edge, per band.
    pub fn edge_counts(&self) -> Vec<usize> {
        self.edges
            .iter()
            .map(|e| {
                let n = e.rows();
                (0..n)
                    .flat_map(|m| ((m + 1)..n).map(move |k| (m, k)))
                    .filter(|&(m, k)| e[(m, k)] > 0.0)
                    .count()
            })
            .collect()
    }

    /// Graphviz DOT, one undirected graph per band, keeping edges whose
    /// weight exceeds `threshold`.
    pub fn to_dot(&self, threshold: f64) -> String {
        let names = self.vocabulary.names();
        let mut out = String::new();
        for (j, e) in self.edges.iter().enumerate() {
            let _ = writeln!(out, "graph band_{j} {{");
            for (m, name) in names.iter().enumerate() {
                let _ = writeln!(out, "  n{m} [label={name:?}];");
            }
            for m in 0..names.len() {
                for k in (m + 1)..names.len() {
                    let w = e[(m, k)];
                    if w > threshold {
                        let _ = writeln!(out, "  n{m} -- n{k} [weight={w:.4}, label=\"{w:.3}\"];");
                    }
                }
            }
            out.push_str("}\n");
        }
        out
    }

    pub fn to_json_string(&self) -> Result<String> {
        files::to_json_string(&GraphFile::from(self))
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: GraphFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("graph file: {e}")))?;
        file.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        files::write_bytes(path, self.to_json_string()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = files::read_to_string(path)?;
        CoOccurrenceGraphSet::from_json_str(&text)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

/// Normalizes raw counts into a graph set.
pub fn normalize(
    vocabulary: ClassVocabulary,
    config: BandConfig,
    raw: Vec<CountMatrix>,
    keep_raw: bool,
) -> Result<CoOccurrenceGraphSet> {
    let edges = raw.iter().map(normalize_counts).collect();
    CoOccurrenceGraphSet::new(vocabulary, config, edges, keep_raw.then_some(raw))
}

pub fn build_prior(
    corpus: &Corpus,
    config: &BandConfig,
    keep_raw: bool,
) -> Result<CoOccurrenceGraphSet> {
    let raw = accumulate(corpus, config)?;
    normalize(corpus.vocabulary.clone(), *config, raw, keep_raw)
}

pub fn build_prior_parallel(
    corpus: &Corpus,
    config: &BandConfig,
    keep_raw: bool,
) -> Result<CoOccurrenceGraphSet> {
    let raw = accumulate_parallel(corpus, config)?;
    normalize(corpus.vocabulary.clone(), *config, raw, keep_raw)
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    version: u32,
    classes: Vec<String>,
    n_bands: usize,
    band_width_frac: f64,
    edges: Vec<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    raw_counts: Option<Vec<CountMatrix>>,
}

impl From<&CoOccurrenceGraphSet> for GraphFile {
    fn from(g: &CoOccurrenceGraphSet) -> Self {
        GraphFile {
            version: GRAPH_SCHEMA_VERSION,
            classes: g.vocabulary.names().to_vec(),
            n_bands: g.band_config.n_bands(),
            band_width_frac: g.band_config.band_width_frac(),
            edges: g.edges.clone(),
            raw_counts: g.raw_counts.clone(),
        }
    }
}

impl TryFrom<GraphFile> for CoOccurrenceGraphSet {
    type Error = Error;

    fn try_from(f: GraphFile) -> Result<Self> {
        if f.version != GRAPH_SCHEMA_VERSION {
            return Err(Error::Parse(format!(
                "graph schema version {} is not supported (expected {GRAPH_SCHEMA_VERSION})",
                f.version
            )));
        }
        let vocabulary =
            ClassVocabulary::new(f.classes).map_err(|e| Error::Parse(e.to_string()))?;
        let config = BandConfig::new(f.n_bands, f.band_width_frac)
            .map_err(|e| Error::Parse(e.to_string()))?;
        CoOccurrenceGraphSet::new(vocabulary, config, f.edges, f.raw_counts)
            .map_err(|e| Error::Parse(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::BBox;

    fn layout_with_centers(h: f64, items: &[(f64, usize)]) -> LayoutDocument {
        let mut l = LayoutDocument::new("l", 100.0, h).unwrap();
        for &(cy, class) in items {
            l.push(
                BBox::new(10.0, cy - 1.0, 20.0, cy + 1.0).unwrap(),
                class,
                None,
            );
        }
        l
    }

    fn corpus_of(classes: &[&str], layouts: Vec<LayoutDocument>) -> Corpus {
        Corpus::new(
            ClassVocabulary::new(classes.iter().copied()).unwrap(),
            layouts,
            "test",
        )
        .unwrap()
    }

    #[test]
    fn default_config_matches_reported_setting() {
        let c = BandConfig::default();
        assert_eq!(c.n_bands(), 10);
        assert_eq!(c.band_width_frac(), 0.1);
    }

    #[test]
    fn band_bounds() {
        let bands = BandConfig::non_overlapping(10).unwrap().bands();
        for (j, &(u, l)) in bands.bounds().iter().enumerate() {
            assert_eq!(u, j as f64 / 10.0);
            let next = if j == 9 { 1.0 } else { (j + 1) as f64 / 10.0 };
            assert_eq!(l, next, "band {j}");
        }
        let overlapping = BandConfig::new(2, 0.75).unwrap().bands();
        assert_eq!(overlapping.bounds(), &[(0.0, 0.75), (0.5, 1.0)]);
        assert_eq!(overlapping.centroids(), &[0.375, 0.75]);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(BandConfig::new(0, 0.5).is_err());
        assert!(BandConfig::new(2, 0.0).is_err());
        assert!(BandConfig::new(2, 1.5).is_err());
    }

    #[test]
    fn membership_examples() {
        let cfg = BandConfig::new(2, 0.5).unwrap();
        let m = band_membership(
            &layout_with_centers(100.0, &[(10.0, 0), (50.0, 0), (100.0, 0)]),
            &cfg,
        );
        assert_eq!(
            m,
            vec![vec![true, false], vec![false, true], vec![false, true]]
        );

        let overlapping = BandConfig::new(2, 0.75).unwrap();
        let m = band_membership(&layout_with_centers(100.0, &[(60.0, 0)]), &overlapping);
        assert_eq!(m, vec![vec![true, true]]);
    }

    #[test]
    fn every_center_on_a_tenth_has_one_band() {
        let cfg = BandConfig::default();
        let bands = cfg.bands();
        for k in 0..=1000 {
            let y = k as f64 / 1000.0;
            assert_eq!(bands.bands_of(y).count(), 1, "y = {y}");
        }
    }

    #[test]
    fn hand_trace_three_boxes() {
        let corpus = corpus_of(
            &["A", "B", "C"],
            vec![layout_with_centers(
                100.0,
                &[(10.0, 0), (20.0, 1), (80.0, 2)],
            )],
        );
        let cfg = BandConfig::new(2, 0.5).unwrap();
        let raw = accumulate(&corpus, &cfg).unwrap();
        assert_eq!(
            raw[0],
            CountMatrix::from_rows(&[vec![1, 1, 0], vec![1, 1, 0], vec![0, 0, 0]]).unwrap()
        );
        assert_eq!(raw[1], CountMatrix::zeros(3));

        let g = build_prior(&corpus, &cfg, false).unwrap();
        let expected0 =
            Matrix::from_rows(&[[1.0, 0.5, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(g.edges[0], expected0);
        assert_eq!(g.edges[1], Matrix::identity(3));
    }

    #[test]
    fn normalize_examples() {
        let m = normalize_counts(&CountMatrix::from_rows(&[vec![1, 1], vec![1, 1]]).unwrap());
        assert_eq!(m, Matrix::from_rows(&[[1.0, 0.5], [0.5, 1.0]]).unwrap());
        assert_eq!(
            normalize_counts(&CountMatrix::zeros(3)),
            Matrix::identity(3)
        );
        let m = normalize_counts(&CountMatrix::from_rows(&[vec![0, 2], vec![2, 0]]).unwrap());
        assert_eq!(m, Matrix::filled(2, 2, 1.0));
    }

    #[test]
    fn empty_corpus_and_singleton_bands_give_zero_counts() {
        let cfg = BandConfig::new(2, 0.5).unwrap();
        let empty = corpus_of(&["A", "B"], vec![]);
        assert!(accumulate(&empty, &cfg)
            .unwrap()
            .iter()
            .all(|c| c.total() == 0));
        let spread = corpus_of(
            &["A", "B"],
            vec![layout_with_centers(100.0, &[(10.0, 0), (90.0, 1)])],
        );
        assert!(accumulate(&spread, &cfg)
            .unwrap()
            .iter()
            .all(|c| c.total() == 0));
    }

    #[test]
    fn single_band_counts_whole_layout() {
        let cfg = BandConfig::new(1, 1.0).unwrap();
        let corpus = corpus_of(
            &["A", "B"],
            vec![layout_with_centers(100.0, &[(10.0, 0), (90.0, 1)])],
        );
        let raw = accumulate(&corpus, &cfg).unwrap();
        assert_eq!(raw.len(), 1);
        assert_eq!(
            raw[0],
            CountMatrix::from_rows(&[vec![1, 1], vec![1, 1]]).unwrap()
        );
    }

    #[test]
    fn out_of_range_class_is_error() {
        let mut corpus = corpus_of(&["A"], vec![layout_with_centers(100.0, &[(10.0, 0)])]);
        corpus.layouts[0].components[0].class_id = 4;
        assert!(accumulate(&corpus, &BandConfig::default()).is_err());
        assert!(accumulate_parallel(&corpus, &BandConfig::default()).is_err());
    }

    #[test]
    fn graph_file_round_trip_and_version_check() {
        let corpus = corpus_of(
            &["A", "B", "C"],
            vec![layout_with_centers(
                100.0,
                &[(10.0, 0), (20.0, 1), (30.0, 1), (80.0, 2)],
            )],
        );
        let g = build_prior(&corpus, &BandConfig::new(2, 0.5).unwrap(), true).unwrap();
        let text = g.to_json_string().unwrap();
        assert_eq!(CoOccurrenceGraphSet::from_json_str(&text).unwrap(), g);

        let bumped = text.replace("\"version\": 1", "\"version\": 2");
        assert!(CoOccurrenceGraphSet::from_json_str(&bumped).is_err());
        let no_classes = r#"{"version":1,"classes":[],"n_bands":1,"band_width_frac":1.0,"edges":[{"rows":0,"cols":0,"data":[]}]}"#;
        assert!(CoOccurrenceGraphSet::from_json_str(no_classes).is_err());
    }

    #[test]
    fn dot_export_lists_strong_edges() {
        let corpus = corpus_of(
            &["A", "B"],
            vec![layout_with_centers(100.0, &[(10.0, 0), (20.0, 1)])],
        );
        let g = build_prior(&corpus, &BandConfig::new(2, 0.5).unwrap(), false).unwrap();
        let dot = g.to_dot(0.1);
        assert!(dot.contains("graph band_0 {"));
        assert!(dot.contains("n0 -- n1"));
        assert_eq!(dot.matches("--").count(), 1);
        assert_eq!(g.edge_counts(), vec![1, 0]);
    }
}
