//! Layout domain types: class vocabularies, boxes, annotated screens and
//! proposal batches.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::files;
use crate::matrix::Matrix;

/// Ordered, duplicate-free list of component class names. The order fixes
/// the row/column index of every class-indexed matrix.
#[derive(Debug, Clone)]
pub struct ClassVocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl ClassVocabulary {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::Invalid("class vocabulary is empty".into()));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::Invalid(format!(
                    "class name at position {i} is empty"
                )));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate class name {name:?}")));
            }
        }
        Ok(ClassVocabulary { names, index })
    }

    /// The 25 RICO semantic component classes.
    pub fn rico25() -> Self {
        ClassVocabulary::new(RICO_25).expect("static vocabulary is valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

impl PartialEq for ClassVocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names
    }
}

impl Serialize for ClassVocabulary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.names.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ClassVocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        ClassVocabulary::new(names).map_err(serde::de::Error::custom)
    }
}

const RICO_25: [&str; 25] = [
    "Advertisement",
    "Background Image",
    "Bottom Navigation",
    "Button Bar",
    "Card",
    "Checkbox",
    "Date Picker",
    "Drawer",
    "Icon",
    "Image",
    "Input",
    "List Item",
    "Map View",
    "Modal",
    "Multi-Tab",
    "Number Stepper",
    "On/Off Switch",
    "Pager Indicator",
    "Radio Button",
    "Slider",
    "Text",
    "Text Button",
    "Toolbar",
    "Video",
    "Web View",
];

/// Axis-aligned box in pixels, origin top-left, y downward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(Error::Invalid(format!(
                "box [{x1}, {y1}, {x2}, {y2}] has non-finite coordinates"
            )));
        }
        if x2 < x1 || y2 < y1 {
            return Err(Error::Invalid(format!(
                "malformed box [{x1}, {y1}, {x2}, {y2}]: expected x1 <= x2 and y1 <= y2"
            )));
        }
        Ok(BBox { x1, y1, x2, y2 })
    }

    pub fn from_array([x1, y1, x2, y2]: [f64; 4]) -> Result<Self> {
        BBox::new(x1, y1, x2, y2)
    }

    /// COCO `[x, y, w, h]` to corner form.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if w < 0.0 || h < 0.0 {
            return Err(Error::Invalid(format!(
                "negative box size in [{x}, {y}, {w}, {h}]"
            )));
        }
        BBox::new(x, y, x + w, y + h)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn center_y(&self) -> f64 {
        (self.y1 + self.y2) / 2.0
    }

    pub fn clamp_to(&self, width: f64, height: f64) -> BBox {
        BBox {
            x1: self.x1.clamp(0.0, width),
            y1: self.y1.clamp(0.0, height),
            x2: self.x2.clamp(0.0, width),
            y2: self.y2.clamp(0.0, height),
        }
    }

    pub fn scaled(&self, factor: f64) -> BBox {
        BBox {
            x1: self.x1 * factor,
            y1: self.y1 * factor,
            x2: self.x2 * factor,
            y2: self.y2 * factor,
        }
    }
}

impl Serialize for BBox {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        BBox::from_array(<[f64; 4]>::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub bbox: BBox,
    pub class_id: usize,
    /// Detection confidence in [0, 1]; absent for ground truth.
    pub score: Option<f64>,
}

/// One annotated screen.
#[derive(Debug, Clone, PartialEq)]
pub struct LayoutDocument {
    pub id: String,
    pub width: f64,
    pub height: f64,
    pub components: Vec<Component>,
}

impl LayoutDocument {
    pub fn new(id: impl Into<String>, width: f64, height: f64) -> Result<Self> {
        let id = id.into();
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(Error::Invalid(format!(
                "layout {id:?}: canvas {width}x{height} must be positive"
            )));
        }
        Ok(LayoutDocument {
            id,
            width,
            height,
            components: Vec::new(),
        })
    }

    /// Adds a component, clamping its box to the canvas.
    pub fn push(&mut self, bbox: BBox, class_id: usize, score: Option<f64>) {
        self.components.push(Component {
            bbox: bbox.clamp_to(self.width, self.height),
            class_id,
            score,
        });
    }

    pub fn boxes(&self) -> Vec<BBox> {
        self.components.iter().map(|c| c.bbox).collect()
    }
}

/// Region proposals (or detections) for one layout: boxes, per-class logits
/// and optional appearance features.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalBatch {
    pub layout_id: String,
    pub boxes: Vec<BBox>,
    pub logits: Matrix,
    pub features: Option<Matrix>,
    pub layout_height: f64,
}

impl ProposalBatch {
    pub fn new(
        layout_id: impl Into<String>,
        boxes: Vec<BBox>,
        logits: Matrix,
        features: Option<Matrix>,
        layout_height: f64,
    ) -> Result<Self> {
        let layout_id = layout_id.into();
        if !(layout_height > 0.0 && layout_height.is_finite()) {
            return Err(Error::Invalid(format!(
                "proposals for {layout_id:?}: height {layout_height} must be positive"
            )));
        }
        if logits.rows() != boxes.len() {
            return Err(Error::shape(
                "proposal logits vs boxes",
                logits.shape(),
                (boxes.len(), 4),
            ));
        }
        if let Some(f) = &features {
            if f.rows() != boxes.len() {
                return Err(Error::shape(
                    "proposal features vs boxes",
                    f.shape(),
                    (boxes.len(), 4),
                ));
            }
        }
        Ok(ProposalBatch {
            layout_id,
            boxes,
            logits,
            features,
            layout_height,
        })
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Box center heights divided by the layout height.
    pub fn normalized_centers(&self) -> Vec<f64> {
        self.boxes
            .iter()
            .map(|b| b.center_y() / self.layout_height)
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ProposalFile = files::read_json(path)?;
        file.try_into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        files::write_json(path, &ProposalFile::from(self))
    }
}

#[derive(Serialize, Deserialize)]
struct ProposalFile {
    layout_id: String,
    height: f64,
    boxes: Vec<BBox>,
    logits: Matrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    features: Option<Matrix>,
}

impl TryFrom<ProposalFile> for ProposalBatch {
    type Error = Error;

    fn try_from(f: ProposalFile) -> Result<Self> {
        ProposalBatch::new(f.layout_id, f.boxes, f.logits, f.features, f.height)
    }
}

impl From<&ProposalBatch> for ProposalFile {
    fn from(p: &ProposalBatch) -> Self {
        ProposalFile {
            layout_id: p.layout_id.clone(),
            height: p.layout_height,
            boxes: p.boxes.clone(),
            logits: p.logits.clone(),
            features: p.features.clone(),
        }
    }
}
