//! Source-domain segmentation network: a dilated residual encoder whose
//! high-level stages trade stride for dilation, four parallel dilated 3×3
//! prediction branches summed together, bilinear upsampling to the input
//! size and a per-pixel softmax.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{Dataset, Image, LabelMap, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::nn::{Bound, ConvGeom, ConvLayer, Float, Graph, Init, ParamSet, Sgd, SgdConfig, Tensor, Var};
use crate::par;

/// Probability clip applied before the logarithm in the cross-entropy.
pub const CE_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmenterConfig {
    pub base_channels: usize,
    /// Residual blocks per stage.
    pub stage_blocks: Vec<usize>,
    /// The first `downsample_stages` stages halve the resolution.
    pub downsample_stages: usize,
    /// Dilation of each remaining (high-level) stage.
    pub dilated_stage_rates: Vec<usize>,
    pub head_rates: [usize; 4],
    pub num_classes: usize,
    pub working_size: usize,
}

impl SegmenterConfig {
    /// ResNet-101 depth (3-4-23-3 blocks), 32 base feature maps, output
    /// stride 4 and head rates {6, 12, 18, 24}.
    pub fn full_scale(working_size: usize) -> Self {
        SegmenterConfig {
            base_channels: 32,
            stage_blocks: vec![3, 4, 23, 3],
            downsample_stages: 2,
            dilated_stage_rates: vec![2, 4],
            head_rates: [6, 12, 18, 24],
            num_classes: NUM_CLASSES,
            working_size,
        }
    }

    /// Small network for 64×64 desk-scale experiments.
    pub fn toy(working_size: usize) -> Self {
        SegmenterConfig {
            base_channels: 6,
            stage_blocks: vec![1, 1, 1],
            downsample_stages: 2,
            dilated_stage_rates: vec![2],
            head_rates: [1, 2, 3, 4],
            num_classes: NUM_CLASSES,
            working_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.base_channels < 4 {
            return bad(format!("base_channels {} is below 4", self.base_channels));
        }
        if self.head_rates.contains(&0) || self.dilated_stage_rates.contains(&0) {
            return bad("dilation rates must be at least 1".into());
        }
        if self.stage_blocks.is_empty() || self.stage_blocks.contains(&0) {
            return bad("every stage needs at least one block".into());
        }
        if self.downsample_stages + self.dilated_stage_rates.len() != self.stage_blocks.len() {
            return bad(format!(
                "{} stages but {} downsampling + {} dilated",
                self.stage_blocks.len(),
                self.downsample_stages,
                self.dilated_stage_rates.len()
            ));
        }
        if self.num_classes < 2 || self.num_classes > NUM_CLASSES {
            return bad(format!("num_classes must be 2 or 3, got {}", self.num_classes));
        }
        if self.working_size >> self.downsample_stages < 2 {
            return bad(format!(
                "{} downsampling stages exceed a {}-pixel input",
                self.downsample_stages, self.working_size
            ));
        }
        Ok(())
    }

    /// Feature maps of each stage: doubling whenever the stage downsamples
    /// or dilates.
    pub fn stage_channels(&self) -> Vec<usize> {
        (0..self.stage_blocks.len())
            .map(|i| self.base_channels << (i + 1))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
struct ResBlock {
    conv1: ConvLayer,
    conv2: ConvLayer,
    shortcut: Option<ConvLayer>,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    stem: ConvLayer,
    blocks: Vec<ResBlock>,
    head: Vec<ConvLayer>,
}

/// Per-pixel class probabilities, `[C, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub probs: Vec<f32>,
}

impl ProbMap {
    pub fn argmax(&self) -> LabelMap {
        let n = self.height * self.width;
        let labels = (0..n)
            .map(|i| {
                let mut best = 0;
                for c in 1..self.num_classes {
                    if self.probs[c * n + i] > self.probs[best * n + i] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect();
        LabelMap {
            height: self.height,
            width: self.width,
            labels,
        }
    }

    pub fn prob(&self, class: usize, y: usize, x: usize) -> f32 {
        self.probs[(class * self.height + y) * self.width + x]
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec(&[self.num_classes, self.height, self.width], self.probs.clone()).expect("shape")
    }
}

/// Mean pixel-wise cross-entropy of a probability map against labels.
pub fn cross_entropy(prob: &ProbMap, gt: &LabelMap) -> Result<f64> {
    if prob.height != gt.height || prob.width != gt.width {
        return Err(Error::shape(&[gt.height, gt.width], &[prob.height, prob.width]));
    }
    let mut g = Graph::<f64>::new();
    let p = g.constant(prob.to_tensor().cast());
    let l = g.cross_entropy(p, &gt.labels, CE_EPS)?;
    Ok(g.value(l).item())
}

/// Maps `[0, 255]` intensities onto the network's `[-1, 1]` input range.
pub fn image_to_tensor<T: Float>(img: &Image) -> Tensor<T> {
    let data = img.pixels.iter().map(|&p| T::of(p as f64 / 127.5 - 1.0)).collect();
    Tensor::from_vec(&[1, img.height, img.width], data).expect("shape")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segmenter<T = f32> {
    config: SegmenterConfig,
    params: ParamSet<T>,
    layout: Layout,
    frozen: bool,
}

impl<T: Float> Segmenter<T> {
    /// Seed-deterministic construction.
    pub fn build(config: SegmenterConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let base = config.base_channels;
        let stem = ConvLayer::new(&mut ps, "stem", 1, base, ConvGeom::same(3, 1), false, Init::Kaiming, &mut rng);
        let mut blocks = Vec::new();
        let mut cin = base;
        let chans = config.stage_channels();
        for (s, (&nblocks, &cout)) in config.stage_blocks.iter().zip(&chans).enumerate() {
            let (stride, dil) = if s < config.downsample_stages {
                (2, 1)
            } else {
                (1, config.dilated_stage_rates[s - config.downsample_stages])
            };
            for b in 0..nblocks {
                let name = format!("stage{s}.block{b}");
                let (st, c_in) = if b == 0 { (stride, cin) } else { (1, cout) };
                let g1 = ConvGeom::new(3, st, dil, dil);
                let conv1 = ConvLayer::new(&mut ps, &format!("{name}.conv1"), c_in, cout, g1, false, Init::Kaiming, &mut rng);
                let conv2 = ConvLayer::new(&mut ps, &format!("{name}.conv2"), cout, cout, ConvGeom::same(3, dil), false, Init::Kaiming, &mut rng);
                let shortcut = (st != 1 || c_in != cout).then(|| {
                    ConvLayer::new(&mut ps, &format!("{name}.shortcut"), c_in, cout, ConvGeom::new(1, st, 0, 1), false, Init::Kaiming, &mut rng)
                });
                blocks.push(ResBlock { conv1, conv2, shortcut });
            }
            cin = cout;
        }
        let head = config
            .head_rates
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                ConvLayer::new(&mut ps, &format!("head.branch{i}"), cin, config.num_classes, ConvGeom::same(3, r), true, Init::Normal(0.01), &mut rng)
            })
            .collect();
        Ok(Segmenter {
            config,
            params: ps,
            layout: Layout { stem, blocks, head },
            frozen: false,
        })
    }

    pub fn config(&self) -> &SegmenterConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Copy that may be trained again.
    pub fn unfrozen(&self) -> Self {
        Segmenter {
            frozen: false,
            ..self.clone()
        }
    }

    /// Mutable parameter access; refused while frozen.
    pub fn params_mut(&mut self) -> Result<&mut ParamSet<T>> {
        if self.frozen {
            return Err(Error::Frozen);
        }
        Ok(&mut self.params)
    }

    /// Records the forward pass of a `[1, H, W]` input in `[-1, 1]`; returns
    /// the `[C, H, W]` probability node.
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let (c, h, w) = g.value(x).chw();
        if c != 1 || h != self.config.working_size || w != self.config.working_size {
            return Err(Error::shape(&[1, self.config.working_size, self.config.working_size], &[c, h, w]));
        }
        let l = &self.layout;
        let mut y = l.stem.forward(g, p, x)?;
        y = g.instance_norm(y);
        y = g.relu(y);
        for b in &l.blocks {
            let mut z = b.conv1.forward(g, p, y)?;
            z = g.instance_norm(z);
            z = g.relu(z);
            z = b.conv2.forward(g, p, z)?;
            z = g.instance_norm(z);
            let skip = match &b.shortcut {
                Some(sc) => {
                    let s = sc.forward(g, p, y)?;
                    g.instance_norm(s)
                }
                None => y,
            };
            let sum = g.add(z, skip)?;
            y = g.relu(sum);
        }
        let branches = l
            .head
            .iter()
            .map(|conv| conv.forward(g, p, y))
            .collect::<Result<Vec<_>>>()?;
        let terms: Vec<(Var, f64)> = branches.into_iter().map(|v| (v, 1.0)).collect();
        let logits = g.weighted_sum(&terms)?;
        let up = g.resize_bilinear(logits, h, w);
        Ok(g.softmax_channels(up))
    }

    /// Pure forward pass.
    pub fn segment(&self, image: &Image) -> Result<ProbMap> {
        if image.height != self.config.working_size || image.width != self.config.working_size {
            return Err(Error::shape(
                &[self.config.working_size, self.config.working_size],
                &[image.height, image.width],
            ));
        }
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let x = g.constant(image_to_tensor(image));
        let out = self.forward(&mut g, &p, x)?;
        let (c, h, w) = g.value(out).chw();
        Ok(ProbMap {
            num_classes: c,
            height: h,
            width: w,
            probs: g.value(out).data().iter().map(|v| v.as_f64() as f32).collect(),
        })
    }

    /// Argmax labels for every image, in parallel.
    pub fn predict_all<'a>(&self, images: impl IntoIterator<Item = &'a Image>) -> Result<Vec<LabelMap>> {
        let imgs: Vec<&Image> = images.into_iter().collect();
        par::map(&imgs, |img| self.segment(img).map(|p| p.argmax()))
            .into_iter()
            .collect()
    }

    /// Cross-entropy of one labeled image plus its parameter gradients.
    pub fn loss_and_grads(&self, image: &Image, gt: &LabelMap) -> Result<(f64, Vec<Tensor<T>>)> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, true);
        let x = g.constant(image_to_tensor(image));
        let prob = self.forward(&mut g, &p, x)?;
        let loss = g.cross_entropy(prob, &gt.labels, CE_EPS)?;
        let value = g.value(loss).item().as_f64();
        let mut grads = g.backward(loss);
        Ok((value, self.params.collect_grads(&p, &mut grads)))
    }
}

impl Segmenter<f32> {
    pub const CHECKPOINT_KIND: &'static str = "segmenter";

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = serde_json::json!({ "config": self.config, "frozen": self.frozen });
        let mut ck = Checkpoint::new(Self::CHECKPOINT_KIND, meta);
        for (n, t) in self.params.iter() {
            ck.push(n, t.clone());
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(Self::CHECKPOINT_KIND)?;
        let config: SegmenterConfig = serde_json::from_value(ck.meta["config"].clone())?;
        let mut model = Segmenter::build(config, 0)?;
        let (names, tensors) = ck.group("");
        model.params.load_from(&names, tensors)?;
        model.frozen = ck.meta["frozen"].as_bool().unwrap_or(false);
        Ok(model)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Only parameters whose name starts with one of these prefixes are
    /// updated; empty means all of them.
    pub trainable_prefixes: Vec<String>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 30,
            lr: 0.01,
            momentum: 0.9,
            seed: 0,
            trainable_prefixes: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean foreground Dice on the validation set, in percent.
    pub val_dice: f64,
}

/// Mean foreground Dice (post-processed) of `model` on a labeled dataset.
pub fn validation_dice(model: &Segmenter<f32>, ds: &Dataset) -> Result<f64> {
    let preds = model.predict_all(ds.images())?;
    let gts: Vec<LabelMap> = ds.items.iter().map(|i| i.label().cloned()).collect::<Result<_>>()?;
    let spacing = ds.items.first().map_or(1.0, |i| i.image.spacing_mm);
    Ok(evaluate(&preds, &gts, spacing, "val")?.mean_dice())
}

/// Per-image SGD with momentum on the pixel-wise cross-entropy; returns the
/// epoch with the best validation Dice (earliest on ties).
pub fn train_segmenter(
    model: &Segmenter<f32>,
    train: &Dataset,
    val: &Dataset,
    opts: &TrainOptions,
) -> Result<(Segmenter<f32>, Vec<EpochRecord>)> {
    if model.is_frozen() {
        return Err(Error::Frozen);
    }
    train.require_labels()?;
    val.require_labels()?;
    if opts.epochs == 0 {
        return Ok((model.clone(), Vec::new()));
    }
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut current = model.clone();
    let mut opt = Sgd::new(current.params(), SgdConfig { momentum: opts.momentum });
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(f64, Segmenter<f32>)> = None;
    let mut history = Vec::with_capacity(opts.epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let frozen_params: Vec<bool> = current
        .params()
        .names()
        .iter()
        .map(|n| !opts.trainable_prefixes.is_empty() && !opts.trainable_prefixes.iter().any(|p| n.starts_with(p.as_str())))
        .collect();
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let item = &train.items[i];
            let (loss, mut grads) = current.loss_and_grads(&item.image, item.label()?)?;
            for (g, _) in grads.iter_mut().zip(&frozen_params).filter(|(_, &f)| f) {
                g.data_mut().fill(0.0);
            }
            let diverged = |what: &str| Error::NonFinite {
                component: format!("segmenter {what} (epoch {epoch}, case {})", item.case_id),
            };
            if !loss.is_finite() {
                return Err(diverged("cross-entropy"));
            }
            if !grads.iter().all(|g| g.is_finite()) {
                return Err(diverged("gradient"));
            }
            total += loss;
            opt.update(current.params_mut()?, &grads, opts.lr);
            if !current.params().tensors().iter().all(|t| t.is_finite()) {
                return Err(diverged("parameters"));
            }
        }
        let val_dice = if val.is_empty() { f64::NAN } else { validation_dice(&current, val)? };
        history.push(EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            val_dice,
        });
        log::debug!("segmenter epoch {epoch}: loss {:.4} val dice {val_dice:.2}", total / train.len() as f64);
        let better = match &best {
            None => true,
            Some((d, _)) => val_dice > *d,
        };
        if better {
            best = Some((val_dice, current.clone()));
        }
    }
    let model = if val.is_empty() { current } else { best.expect("at least one epoch").1 };
    Ok((model, history))
}
