use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use seuda::adaptation::{AdaptationConfig, DiscriminatorConfig, GeneratorConfig, LossWeights, LrSchedule};
use seuda::baselines::StlOptions;
use seuda::data::NUM_CLASSES;
use seuda::segmenter::{SegmenterConfig, TrainOptions};

/// Every tunable of a run, as one flat table. Command-line flags override
/// values read from a file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub working_size: usize,
    /// Overrides the pixel spacing of loaded images when set.
    pub spacing_mm: Option<f64>,

    pub seg_epochs: usize,
    pub seg_lr: f64,
    pub seg_momentum: f64,
    pub seg_base_channels: usize,
    pub seg_stage_blocks: Vec<usize>,
    pub seg_downsample_stages: usize,
    pub seg_dilated_rates: Vec<usize>,
    pub seg_head_rates: [usize; 4],

    pub uda_epochs: usize,
    pub alpha: f64,
    pub beta: f64,
    pub lambda_sem: f64,
    pub pool_size: usize,
    pub mask_pool: bool,
    pub label_smoothing: f64,
    pub base_lr: f64,
    /// Defaults to half of `uda_epochs`.
    pub lr_hold: Option<usize>,
    /// Defaults to the rest of `uda_epochs`.
    pub lr_decay: Option<usize>,
    pub gen_downsamples: usize,
    pub gen_residual_blocks: usize,
    pub gen_base_channels: usize,
    pub disc_layers: usize,
    pub disc_base_channels: usize,

    pub stl_epochs: usize,
    pub stl_lr_factor: f64,
    pub histogram_bins: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let seg = SegmenterConfig::toy(64);
        let ad = AdaptationConfig::default();
        RunConfig {
            seed: 0,
            working_size: 64,
            spacing_mm: None,
            seg_epochs: 30,
            seg_lr: 0.01,
            seg_momentum: 0.9,
            seg_base_channels: seg.base_channels,
            seg_stage_blocks: seg.stage_blocks,
            seg_downsample_stages: seg.downsample_stages,
            seg_dilated_rates: seg.dilated_stage_rates,
            seg_head_rates: seg.head_rates,
            uda_epochs: 200,
            alpha: ad.weights.alpha,
            beta: ad.weights.beta,
            lambda_sem: ad.weights.lambda_sem,
            pool_size: ad.pool_capacity,
            mask_pool: ad.mask_pool,
            label_smoothing: ad.label_smoothing,
            base_lr: ad.schedule.base_lr,
            lr_hold: None,
            lr_decay: None,
            gen_downsamples: ad.generator.encoder_downsamples,
            gen_residual_blocks: ad.generator.residual_blocks,
            gen_base_channels: ad.generator.base_channels,
            disc_layers: ad.discriminator.layers,
            disc_base_channels: ad.discriminator.base_channels,
            stl_epochs: 20,
            stl_lr_factor: 0.1,
            histogram_bins: 256,
        }
    }
}

impl RunConfig {
    /// Reads a TOML file, or the `config` record embedded in a report.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        if path.extension().is_some_and(|e| e == "jsonl") {
            for line in text.lines() {
                let v: serde_json::Value = serde_json::from_str(line)?;
                if v["record"] == "config" {
                    return Ok(serde_json::from_value(v["config"].clone())?);
                }
            }
            bail!("{} has no embedded config record", path.display());
        }
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn segmenter(&self) -> SegmenterConfig {
        SegmenterConfig {
            base_channels: self.seg_base_channels,
            stage_blocks: self.seg_stage_blocks.clone(),
            downsample_stages: self.seg_downsample_stages,
            dilated_stage_rates: self.seg_dilated_rates.clone(),
            head_rates: self.seg_head_rates,
            num_classes: NUM_CLASSES,
            working_size: self.working_size,
        }
    }

    pub fn seg_training(&self) -> TrainOptions {
        TrainOptions {
            epochs: self.seg_epochs,
            lr: self.seg_lr,
            momentum: self.seg_momentum,
            seed: self.seed,
            trainable_prefixes: Vec::new(),
        }
    }

    pub fn stl(&self) -> StlOptions {
        StlOptions {
            train: TrainOptions {
                epochs: self.stl_epochs,
                ..self.seg_training()
            },
            lr_factor: self.stl_lr_factor,
        }
    }

    pub fn adaptation(&self) -> AdaptationConfig {
        let hold = self.lr_hold.unwrap_or(self.uda_epochs / 2);
        let decay = self.lr_decay.unwrap_or(self.uda_epochs.saturating_sub(hold));
        AdaptationConfig {
            working_size: self.working_size,
            num_classes: NUM_CLASSES,
            weights: LossWeights {
                alpha: self.alpha,
                beta: self.beta,
                lambda_sem: self.lambda_sem,
            },
            generator: GeneratorConfig {
                encoder_downsamples: self.gen_downsamples,
                residual_blocks: self.gen_residual_blocks,
                base_channels: self.gen_base_channels,
            },
            discriminator: DiscriminatorConfig {
                layers: self.disc_layers,
                base_channels: self.disc_base_channels,
                patch_mode: true,
            },
            schedule: LrSchedule {
                base_lr: self.base_lr,
                hold,
                decay,
            },
            pool_capacity: self.pool_size,
            mask_pool: self.mask_pool,
            label_smoothing: self.label_smoothing,
            ..AdaptationConfig::default()
        }
    }
}
