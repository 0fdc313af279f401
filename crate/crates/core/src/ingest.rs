//! Corpus loading and saving.
//!
//! The native format is
//!
//! ```json
//! {"classes": ["..."],
//!  "layouts": [{"id": "...", "width": W, "height": H,
//!               "components": [{"bbox": [x1, y1, x2, y2], "class": "name", "score": 0.9}]}]}
//! ```
//!
//! COCO-style detection JSON (`images`, `annotations`, `categories`) can be
//! imported with [`load_coco`]. Boxes overflowing the canvas are clamped.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::files;
use crate::layout::{BBox, ClassVocabulary, LayoutDocument};

/// A set of annotated layouts over one class vocabulary.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocabulary: ClassVocabulary,
    pub layouts: Vec<LayoutDocument>,
    /// Where the corpus came from. Not part of equality.
    pub source: String,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.vocabulary == other.vocabulary && self.layouts == other.layouts
    }
}

impl Corpus {
    /// Validates ids and class references, and clamps every box to its canvas.
    pub fn new(
        vocabulary: ClassVocabulary,
        mut layouts: Vec<LayoutDocument>,
        source: impl Into<String>,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(layouts.len());
        for layout in &mut layouts {
            if !seen.insert(layout.id.clone()) {
                return Err(Error::Invalid(format!(
                    "duplicate layout id {:?}",
                    layout.id
                )));
            }
            if !(layout.width > 0.0 && layout.height > 0.0) {
                return Err(Error::Invalid(format!(
                    "layout {:?}: canvas {}x{} must be positive",
                    layout.id, layout.width, layout.height
                )));
            }
            let (w, h) = (layout.width, layout.height);
            for c in &mut layout.components {
                if c.class_id >= vocabulary.len() {
                    return Err(Error::Invalid(format!(
                        "layout {:?}: class id {} out of range for {} classes",
                        layout.id,
                        c.class_id,
                        vocabulary.len()
                    )));
                }
                if let Some(s) = c.score {
                    if !(0.0..=1.0).contains(&s) {
                        return Err(Error::Invalid(format!(
                            "layout {:?}: score {s} outside [0, 1]",
                            layout.id
                        )));
                    }
                }
                c.bbox = c.bbox.clamp_to(w, h);
            }
        }
        Ok(Corpus {
            vocabulary,
            layouts,
            source: source.into(),
        })
    }

    pub fn empty(vocabulary: ClassVocabulary) -> Self {
        Corpus {
            vocabulary,
            layouts: Vec::new(),
            source: String::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.layouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layouts.is_empty()
    }

    pub fn n_components(&self) -> usize {
        self.layouts.iter().map(|l| l.components.len()).sum()
    }

    pub fn layout(&self, id: &str) -> Option<&LayoutDocument> {
        self.layouts.iter().find(|l| l.id == id)
    }

    /// Splits into (layouts whose id is listed, the rest), preserving order.
    /// Listed ids absent from the corpus are an error.
    pub fn split_by_ids<S: AsRef<str>>(&self, ids: &[S]) -> Result<(Corpus, Corpus)> {
        let wanted: HashSet<&str> = ids.iter().map(AsRef::as_ref).collect();
        let present: HashSet<&str> = self.layouts.iter().map(|l| l.id.as_str()).collect();
        let mut missing: Vec<&str> = wanted.difference(&present).copied().collect();
        if !missing.is_empty() {
            missing.sort_unstable();
            return Err(Error::Invalid(format!(
                "unknown layout ids: {}",
                missing.join(", ")
            )));
        }
        let (picked, rest): (Vec<_>, Vec<_>) = self
            .layouts
            .iter()
            .cloned()
            .partition(|l| wanted.contains(l.id.as_str()));
        Ok((self.with_layouts(picked), self.with_layouts(rest)))
    }

    /// Seeded random split into (train, test); `test_fraction` of the layouts
    /// (rounded) go to the test side. Both sides keep corpus order.
    pub fn split_random(&self, test_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
        if !(0.0..=1.0).contains(&test_fraction) {
            return Err(Error::Invalid(format!(
                "test fraction {test_fraction} outside [0, 1]"
            )));
        }
        let mut order: Vec<usize> = (0..self.layouts.len()).collect();
        order.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
        let n_test = (test_fraction * self.layouts.len() as f64).round() as usize;
        let test_idx: HashSet<usize> = order[..n_test].iter().copied().collect();
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, l) in self.layouts.iter().enumerate() {
            if test_idx.contains(&i) {
                test.push(l.clone());
            } else {
                train.push(l.clone());
            }
        }
        Ok((self.with_layouts(train), self.with_layouts(test)))
    }

    fn with_layouts(&self, layouts: Vec<LayoutDocument>) -> Corpus {
        Corpus {
            vocabulary: self.vocabulary.clone(),
            layouts,
            source: self.source.clone(),
        }
    }

    pub fn to_native_string(&self) -> Result<String> {
        files::to_json_string(&NativeCorpus::from(self))
    }
}

#[derive(Serialize, Deserialize)]
struct NativeCorpus {
    classes: Vec<String>,
    layouts: Vec<NativeLayout>,
}

#[derive(Serialize, Deserialize)]
struct NativeLayout {
    id: String,
    width: f64,
    height: f64,
    components: Vec<NativeComponent>,
}

#[derive(Serialize, Deserialize)]
struct NativeComponent {
    bbox: [f64; 4],
    class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

impl From<&Corpus> for NativeCorpus {
    fn from(c: &Corpus) -> Self {
        NativeCorpus {
            classes: c.vocabulary.names().to_vec(),
            layouts: c
                .layouts
                .iter()
                .map(|l| NativeLayout {
                    id: l.id.clone(),
                    width: l.width,
                    height: l.height,
                    components: l
                        .components
                        .iter()
                        .map(|comp| NativeComponent {
                            bbox: comp.bbox.to_array(),
                            class: c.vocabulary.names()[comp.class_id].clone(),
                            score: comp.score,
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

fn native_to_corpus(native: NativeCorpus, source: String) -> Result<Corpus> {
    let vocabulary = ClassVocabulary::new(native.classes)?;
    let mut layouts = Vec::with_capacity(native.layouts.len());
    for nl in native.layouts {
        let mut layout = LayoutDocument::new(nl.id, nl.width, nl.height)
            .map_err(|e| Error::Parse(e.to_string()))?;
        for comp in nl.components {
            let class_id = vocabulary.id_of(&comp.class).ok_or_else(|| {
                Error::Parse(format!(
                    "layout {:?}: unknown class {:?}",
                    layout.id, comp.class
                ))
            })?;
            let bbox = BBox::from_array(comp.bbox)
                .map_err(|e| Error::Parse(format!("layout {:?}: {e}", layout.id)))?;
            layout.push(bbox, class_id, comp.score);
        }
        layouts.push(layout);
    }
    Corpus::new(vocabulary, layouts, source).map_err(|e| Error::Parse(e.to_string()))
}

pub fn parse_native(text: &str, source: &str) -> Result<Corpus> {
    let native: NativeCorpus =
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("{source}: {e}")))?;
    native_to_corpus(native, source.to_string())
}

pub fn load_native(path: &Path) -> Result<Corpus> {
    let text = files::read_to_string(path)?;
    parse_native(&text, &path.display().to_string())
}

pub fn save_native(corpus: &Corpus, path: &Path) -> Result<()> {
    files::write_bytes(path, corpus.to_native_string()?.as_bytes())
}

#[derive(Deserialize)]
struct CocoFile {
    #[serde(default)]
    images: Option<Vec<CocoImage>>,
    #[serde(default)]
    annotations: Option<Vec<CocoAnnotation>>,
    #[serde(default)]
    categories: Option<Vec<CocoCategory>>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: u64,
    width: f64,
    height: f64,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
    #[serde(default)]
    score: Option<f64>,
}

#[derive(Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

/// Imports COCO-style JSON. `images` comes from `images_path`; `annotations`
/// and `categories` from `annotations_path` (categories fall back to the
/// images file). Both paths may name the same file. Layout ids are the image
/// ids as strings, in ascending id order; the vocabulary follows ascending
/// category id.
pub fn load_coco(images_path: &Path, annotations_path: &Path) -> Result<Corpus> {
    let images_file: CocoFile = files::read_json(images_path)?;
    let ann_file: CocoFile = files::read_json(annotations_path)?;
    let images = images_file
        .images
        .ok_or_else(|| Error::Parse(format!("{}: missing `images`", images_path.display())))?;
    let mut categories = ann_file
        .categories
        .or(images_file.categories)
        .ok_or_else(|| Error::Parse("COCO input has no `categories`".into()))?;
    let annotations = ann_file.annotations.unwrap_or_default();

    categories.sort_by_key(|c| c.id);
    let cat_index: HashMap<u64, usize> = categories
        .iter()
        .enumerate()
        .map(|(i, c)| (c.id, i))
        .collect();
    if cat_index.len() != categories.len() {
        return Err(Error::Parse("duplicate category id".into()));
    }
    let vocabulary = ClassVocabulary::new(categories.into_iter().map(|c| c.name))
        .map_err(|e| Error::Parse(e.to_string()))?;

    let mut by_image: BTreeMap<u64, LayoutDocument> = BTreeMap::new();
    for img in images {
        let layout = LayoutDocument::new(img.id.to_string(), img.width, img.height)
            .map_err(|e| Error::Parse(e.to_string()))?;
        if by_image.insert(img.id, layout).is_some() {
            return Err(Error::Parse(format!("duplicate image id {}", img.id)));
        }
    }
    for (n, ann) in annotations.into_iter().enumerate() {
        let class_id = *cat_index.get(&ann.category_id).ok_or_else(|| {
            Error::Parse(format!(
                "annotation {n}: unknown category_id {}",
                ann.category_id
            ))
        })?;
        let layout = by_image.get_mut(&ann.image_id).ok_or_else(|| {
            Error::Parse(format!("annotation {n}: unknown image_id {}", ann.image_id))
        })?;
        let [x, y, w, h] = ann.bbox;
        let bbox = BBox::from_xywh(x, y, w, h)
            .map_err(|e| Error::Parse(format!("annotation {n}: {e}")))?;
        layout.push(bbox, class_id, ann.score);
    }
    let source = if images_path == annotations_path {
        images_path.display().to_string()
    } else {
        format!("{} + {}", images_path.display(), annotations_path.display())
    };
    Corpus::new(vocabulary, by_image.into_values().collect(), source)
        .map_err(|e| Error::Parse(e.to_string()))
}
