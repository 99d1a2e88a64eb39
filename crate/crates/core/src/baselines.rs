//! Comparison settings: no adaptation, histogram matching, supervised
//! fine-tuning on target labels, and the two adaptation variants.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adaptation::AdaptationState;
use crate::data::{Dataset, Domain, Image, LabelMap};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_cases, MetricsReport};
use crate::par;
use crate::segmenter::{train_segmenter, EpochRecord, Segmenter, TrainOptions};

/// Normalised intensity histogram over `[0, 256)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub mass: Vec<f64>,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.mass.len()
    }

    fn bin_of(&self, v: f32) -> usize {
        let b = (v as f64 * self.bins() as f64 / 256.0).floor();
        (b.max(0.0) as usize).min(self.bins() - 1)
    }

    fn value_of(&self, bin: usize) -> f32 {
        (bin as f64 * 256.0 / self.bins() as f64) as f32
    }

    pub fn cdf(&self) -> Vec<f64> {
        self.mass
            .iter()
            .scan(0.0, |acc, &m| {
                *acc += m;
                Some(*acc)
            })
            .collect()
    }

    /// One bin mass per line.
    pub fn to_text(&self) -> String {
        self.mass.iter().map(|m| format!("{m:.17e}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mass = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad histogram line `{l}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if mass.is_empty() {
            return Err(Error::Empty("histogram"));
        }
        Ok(Histogram { mass })
    }

    fn of_images<'a>(images: impl IntoIterator<Item = &'a Image>, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Config("histogram needs at least one bin".into()));
        }
        let mut h = Histogram { mass: vec![0.0; bins] };
        let mut counts = vec![0u64; bins];
        let mut total = 0u64;
        for img in images {
            for &p in &img.pixels {
                counts[h.bin_of(p)] += 1;
            }
            total += img.pixels.len() as u64;
        }
        if total == 0 {
            return Err(Error::Empty("histogram input"));
        }
        for (m, c) in h.mass.iter_mut().zip(counts) {
            *m = c as f64 / total as f64;
        }
        Ok(h)
    }
}

/// Pooled histogram of every pixel in the source training images.
pub fn build_reference_histogram(source_train: &Dataset, bins: usize) -> Result<Histogram> {
    if source_train.is_empty() {
        return Err(Error::Empty("source training set"));
    }
    Histogram::of_images(source_train.images(), bins)
}

/// CDF matching: a pixel in bin `v` becomes the smallest reference value `r`
/// with `CDF_ref(r) >= CDF_img(v)`.
pub fn histogram_match(image: &Image, reference: &Histogram) -> Result<Image> {
    let own = Histogram::of_images([image], reference.bins())?;
    let own_cdf = own.cdf();
    let ref_cdf = reference.cdf();
    let mut lut = vec![0f32; reference.bins()];
    let mut r = 0;
    for (v, &c) in own_cdf.iter().enumerate() {
        while r + 1 < ref_cdf.len() && ref_cdf[r] < c - 1e-12 {
            r += 1;
        }
        lut[v] = reference.value_of(r);
    }
    let pixels = image.pixels.iter().map(|&p| lut[own.bin_of(p)]).collect();
    Ok(Image::new(image.height, image.width, pixels, image.domain)?.with_spacing(image.spacing_mm))
}

/// Options for supervised fine-tuning on labeled target data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StlOptions {
    pub train: TrainOptions,
    /// Multiplier applied to `train.lr`.
    pub lr_factor: f64,
}

impl Default for StlOptions {
    fn default() -> Self {
        StlOptions {
            train: TrainOptions::default(),
            lr_factor: 0.1,
        }
    }
}

/// Continues training a source model on labeled target data at a reduced
/// learning rate, keeping the best epoch on the target validation set.
pub fn fine_tune_stl(
    source_model: &Segmenter<f32>,
    target_train: &Dataset,
    target_val: &Dataset,
    opts: &StlOptions,
) -> Result<(Segmenter<f32>, Vec<EpochRecord>)> {
    let train = TrainOptions {
        lr: opts.train.lr * opts.lr_factor,
        ..opts.train.clone()
    };
    train_segmenter(source_model, target_train, target_val, &train)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Setting {
    #[serde(rename = "S-test")]
    STest,
    #[serde(rename = "T-noDA")]
    TNoDa,
    #[serde(rename = "T-HistM")]
    THistM,
    #[serde(rename = "T-STL")]
    TStl,
    #[serde(rename = "CyUDA")]
    CyUda,
    #[serde(rename = "SeUDA")]
    SeUda,
}

impl Setting {
    pub const ALL: [Setting; 6] = [
        Setting::STest,
        Setting::TNoDa,
        Setting::THistM,
        Setting::TStl,
        Setting::CyUda,
        Setting::SeUda,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Setting::STest => "S-test",
            Setting::TNoDa => "T-noDA",
            Setting::THistM => "T-HistM",
            Setting::TStl => "T-STL",
            Setting::CyUda => "CyUDA",
            Setting::SeUda => "SeUDA",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Setting::ALL
            .into_iter()
            .find(|k| k.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown setting `{s}`")))
    }
}

/// Artifacts a setting may need. Anything absent is reported by name when
/// a setting requires it.
#[derive(Clone, Copy, Default)]
pub struct SettingInputs<'a> {
    /// The frozen source segmenter.
    pub segmenter: Option<&'a Segmenter<f32>>,
    pub source_test: Option<&'a Dataset>,
    pub target_test: Option<&'a Dataset>,
    pub reference: Option<&'a Histogram>,
    pub stl_model: Option<&'a Segmenter<f32>>,
    /// Adaptation state trained without the semantic term.
    pub cyuda: Option<&'a AdaptationState<f32>>,
    pub seuda: Option<&'a AdaptationState<f32>>,
}

fn need<'a, T: ?Sized>(v: Option<&'a T>, setting: Setting, what: &str) -> Result<&'a T> {
    v.ok_or_else(|| Error::MissingPrerequisite {
        setting: setting.tag().into(),
        what: what.into(),
    })
}

fn score(setting: Setting, model: &Segmenter<f32>, ds: &Dataset, images: &[Image]) -> Result<MetricsReport> {
    let preds = model.predict_all(images)?;
    let gts: Vec<LabelMap> = ds.items.iter().map(|i| i.label().cloned()).collect::<Result<_>>()?;
    let ids: Vec<String> = ds.items.iter().map(|i| i.case_id.clone()).collect();
    let spacing = ds.items.first().map_or(1.0, |i| i.image.spacing_mm);
    evaluate_cases(&ids, &preds, &gts, spacing, setting.tag())
}

fn transformed(ds: &Dataset, f: impl Fn(&Image) -> Result<Image> + Sync) -> Result<Vec<Image>> {
    let imgs: Vec<&Image> = ds.images().collect();
    par::map(&imgs, |i| f(i)).into_iter().collect()
}

/// The images a setting feeds to its segmenter, plus that segmenter.
pub fn setting_inputs<'a>(setting: Setting, inputs: &SettingInputs<'a>) -> Result<(&'a Segmenter<f32>, &'a Dataset, Vec<Image>)> {
    let seg = || need(inputs.segmenter, setting, "source segmenter");
    let tgt = || need(inputs.target_test, setting, "labeled target test set");
    Ok(match setting {
        Setting::STest => {
            let ds = need(inputs.source_test, setting, "labeled source test set")?;
            (seg()?, ds, ds.images().cloned().collect())
        }
        Setting::TNoDa => (seg()?, tgt()?, tgt()?.images().cloned().collect()),
        Setting::THistM => {
            let h = need(inputs.reference, setting, "reference histogram")?;
            (seg()?, tgt()?, transformed(tgt()?, |i| histogram_match(i, h))?)
        }
        Setting::TStl => {
            let m = need(inputs.stl_model, setting, "fine-tuned target model")?;
            (m, tgt()?, tgt()?.images().cloned().collect())
        }
        Setting::CyUda | Setting::SeUda => {
            let st = if setting == Setting::CyUda {
                need(inputs.cyuda, setting, "adaptation state trained with lambda_sem = 0")?
            } else {
                need(inputs.seuda, setting, "trained adaptation state")?
            };
            (seg()?, tgt()?, transformed(tgt()?, |i| st.transform(i))?)
        }
    })
}

/// Runs one setting's pipeline and scores it.
pub fn run_setting(setting: Setting, inputs: &SettingInputs<'_>) -> Result<MetricsReport> {
    let (model, ds, images) = setting_inputs(setting, inputs)?;
    if images.iter().any(|i| i.domain == Domain::Transformed) || setting != Setting::STest {
        ds.require_labels()?;
    }
    score(setting, model, ds, &images)
}
