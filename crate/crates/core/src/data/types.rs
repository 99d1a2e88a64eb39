use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 3;
pub const BACKGROUND: u8 = 0;
pub const RIGHT_LUNG: u8 = 1;
pub const LEFT_LUNG: u8 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
    Transformed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitTag {
    Train,
    Val,
    Test,
    Unsplit,
}

/// Grayscale raster, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
    /// Physical pixel size in millimetres.
    pub spacing_mm: f64,
    pub domain: Domain,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>, domain: Domain) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Empty("image"));
        }
        if pixels.len() != height * width {
            return Err(Error::shape(&[height, width], &[pixels.len()]));
        }
        Ok(Image {
            height,
            width,
            pixels,
            spacing_mm: 1.0,
            domain,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32, domain: Domain) -> Self {
        Image {
            height,
            width,
            pixels: vec![value; height * width],
            spacing_mm: 1.0,
            domain,
        }
    }

    pub fn with_spacing(mut self, spacing_mm: f64) -> Self {
        self.spacing_mm = spacing_mm;
        self
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.pixels
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &p| (lo.min(p), hi.max(p)))
    }
}

/// Per-pixel class assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::shape(&[height, width], &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::InvalidClassId {
                id: bad as u32,
                context: "label map".into(),
            });
        }
        Ok(LabelMap { height, width, labels })
    }

    pub fn background(height: usize, width: usize) -> Self {
        LabelMap {
            height,
            width,
            labels: vec![BACKGROUND; height * width],
        }
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        self.labels[y * self.width + x] = v;
    }

    /// Binary mask of one class.
    pub fn mask(&self, class_id: u8) -> Vec<bool> {
        self.labels.iter().map(|&l| l == class_id).collect()
    }

    pub fn count(&self, class_id: u8) -> usize {
        self.labels.iter().filter(|&&l| l == class_id).count()
    }

    pub fn same_dims(&self, other: &LabelMap) -> bool {
        self.height == other.height && self.width == other.width
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Item {
    pub case_id: String,
    pub image: Image,
    pub label: Option<LabelMap>,
}

impl Item {
    pub fn label(&self) -> Result<&LabelMap> {
        self.label.as_ref().ok_or_else(|| Error::Unlabeled {
            case_id: self.case_id.clone(),
        })
    }
}

/// Ordered, immutable-after-construction collection of cases.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub items: Vec<Item>,
    pub domain: Domain,
    pub split: SplitTag,
}

impl Dataset {
    pub fn new(items: Vec<Item>, domain: Domain, split: SplitTag) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for it in &items {
            if !seen.insert(it.case_id.as_str()) {
                return Err(Error::Config(format!("duplicate case id `{}`", it.case_id)));
            }
            if let Some(l) = &it.label {
                if l.height != it.image.height || l.width != it.image.width {
                    return Err(Error::shape(&[it.image.height, it.image.width], &[l.height, l.width]));
                }
            }
        }
        Ok(Dataset { items, domain, split })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labeled_count(&self) -> usize {
        self.items.iter().filter(|i| i.label.is_some()).count()
    }

    pub fn images(&self) -> impl Iterator<Item = &Image> {
        self.items.iter().map(|i| &i.image)
    }

    /// Errors on the first unlabeled item.
    pub fn require_labels(&self) -> Result<()> {
        self.items.iter().try_for_each(|i| i.label().map(|_| ()))
    }

    pub fn take(&self, n: usize) -> Dataset {
        Dataset {
            items: self.items.iter().take(n).cloned().collect(),
            domain: self.domain,
            split: self.split,
        }
    }

    /// Same cases with the labels dropped.
    pub fn without_labels(&self) -> Dataset {
        Dataset {
            items: self
                .items
                .iter()
                .map(|i| Item {
                    label: None,
                    ..i.clone()
                })
                .collect(),
            domain: self.domain,
            split: self.split,
        }
    }
}
