use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Bound, ConvGeom, ConvLayer, Float, Graph, Init, ParamSet, Var};

const GAN_INIT: Init = Init::Normal(0.02);
const LEAK: f64 = 0.2;

/// Encoder / residual transformer / decoder image-to-image network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub encoder_downsamples: usize,
    pub residual_blocks: usize,
    pub base_channels: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            encoder_downsamples: 2,
            residual_blocks: 2,
            base_channels: 4,
        }
    }
}

impl GeneratorConfig {
    /// The 9-block, 64-feature layout used for 256-pixel and larger inputs.
    pub fn full_scale() -> Self {
        GeneratorConfig {
            encoder_downsamples: 2,
            residual_blocks: 9,
            base_channels: 64,
        }
    }

    pub fn validate(&self, working_size: usize) -> Result<()> {
        if self.encoder_downsamples == 0 || self.residual_blocks == 0 || self.base_channels == 0 {
            return Err(Error::Config("generator sizes must all be positive".into()));
        }
        let f = 1usize << self.encoder_downsamples;
        if working_size % f != 0 || working_size / f < 2 {
            return Err(Error::Config(format!(
                "working size {working_size} is incompatible with {} generator downsamplings",
                self.encoder_downsamples
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct GenLayout {
    head: ConvLayer,
    down: Vec<ConvLayer>,
    blocks: Vec<(ConvLayer, ConvLayer)>,
    up: Vec<ConvLayer>,
    out: ConvLayer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator<T = f32> {
    pub config: GeneratorConfig,
    pub params: ParamSet<T>,
    layout: GenLayout,
}

impl<T: Float> Generator<T> {
    pub fn build(config: &GeneratorConfig, working_size: usize, seed: u64) -> Result<Self> {
        config.validate(working_size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let base = config.base_channels;
        let head = ConvLayer::new(&mut ps, "head", 1, base, ConvGeom::same(7, 1), false, GAN_INIT, &mut rng);
        let mut c = base;
        let mut down = Vec::new();
        for i in 0..config.encoder_downsamples {
            down.push(ConvLayer::new(&mut ps, &format!("down{i}"), c, c * 2, ConvGeom::new(3, 2, 1, 1), false, GAN_INIT, &mut rng));
            c *= 2;
        }
        let blocks = (0..config.residual_blocks)
            .map(|i| {
                let a = ConvLayer::new(&mut ps, &format!("res{i}.conv1"), c, c, ConvGeom::same(3, 1), false, GAN_INIT, &mut rng);
                let b = ConvLayer::new(&mut ps, &format!("res{i}.conv2"), c, c, ConvGeom::same(3, 1), false, GAN_INIT, &mut rng);
                (a, b)
            })
            .collect();
        let mut up = Vec::new();
        for i in 0..config.encoder_downsamples {
            up.push(ConvLayer::new(&mut ps, &format!("up{i}"), c, c / 2, ConvGeom::same(3, 1), false, GAN_INIT, &mut rng));
            c /= 2;
        }
        let out = ConvLayer::new(&mut ps, "out", c, 1, ConvGeom::same(7, 1), true, GAN_INIT, &mut rng);
        Ok(Generator {
            config: config.clone(),
            params: ps,
            layout: GenLayout { head, down, blocks, up, out },
        })
    }

    /// `[1, H, W]` in `[-1, 1]` to `[1, H, W]` in `(-1, 1)`.
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let l = &self.layout;
        let norm_relu = |g: &mut Graph<T>, v: Var| {
            let n = g.instance_norm(v);
            g.relu(n)
        };
        let mut y = l.head.forward(g, p, x)?;
        y = norm_relu(g, y);
        for conv in &l.down {
            y = conv.forward(g, p, y)?;
            y = norm_relu(g, y);
        }
        for (a, b) in &l.blocks {
            let mut z = a.forward(g, p, y)?;
            z = norm_relu(g, z);
            z = b.forward(g, p, z)?;
            z = g.instance_norm(z);
            y = g.add(y, z)?;
        }
        for conv in &l.up {
            y = g.upsample_nearest(y, 2);
            y = conv.forward(g, p, y)?;
            y = norm_relu(g, y);
        }
        let o = l.out.forward(g, p, y)?;
        Ok(g.tanh(o))
    }
}

/// Fully convolutional patch discriminator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    /// Convolution count: `layers - 2` stride-2 layers, one stride-1 layer
    /// and the single-channel scoring layer.
    pub layers: usize,
    pub base_channels: usize,
    /// When false the score map is averaged to a single value.
    pub patch_mode: bool,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            layers: 5,
            base_channels: 8,
            patch_mode: true,
        }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self, working_size: usize) -> Result<()> {
        if self.layers < 2 {
            return Err(Error::Config(format!("discriminator needs at least 2 layers, got {}", self.layers)));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("discriminator base_channels must be positive".into()));
        }
        match self.score_map_size(working_size) {
            Some(n) if n >= 1 => Ok(()),
            _ => Err(Error::Config(format!(
                "a {}-layer discriminator does not fit a {working_size}-pixel input",
                self.layers
            ))),
        }
    }

    fn geoms(&self) -> Vec<ConvGeom> {
        let mut v = vec![ConvGeom::new(4, 2, 1, 1); self.layers - 2];
        v.push(ConvGeom::new(4, 1, 1, 1));
        v.push(ConvGeom::new(4, 1, 1, 1));
        v
    }

    /// Side length of one score cell's receptive field in input pixels.
    pub fn receptive_field(&self) -> usize {
        self.geoms()
            .iter()
            .rev()
            .fold(1, |rf, g| (rf - 1) * g.stride + g.kernel)
    }

    pub fn score_map_size(&self, working_size: usize) -> Option<usize> {
        self.geoms().iter().try_fold(working_size, |n, g| g.out_len(n).filter(|&m| m > 0))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T = f32> {
    pub config: DiscriminatorConfig,
    pub in_channels: usize,
    pub params: ParamSet<T>,
    convs: Vec<ConvLayer>,
}

impl<T: Float> Discriminator<T> {
    pub fn build(config: &DiscriminatorConfig, in_channels: usize, working_size: usize, seed: u64) -> Result<Self> {
        config.validate(working_size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let geoms = config.geoms();
        let last = geoms.len() - 1;
        let mut cin = in_channels;
        let convs = geoms
            .into_iter()
            .enumerate()
            .map(|(i, geom)| {
                let cout = if i == last { 1 } else { config.base_channels << i.min(3) };
                let bias = i == 0 || i == last;
                let conv = ConvLayer::new(&mut ps, &format!("conv{i}"), cin, cout, geom, bias, GAN_INIT, &mut rng);
                cin = cout;
                conv
            })
            .collect();
        Ok(Discriminator {
            config: config.clone(),
            in_channels,
            params: ps,
            convs,
        })
    }

    /// Score map `[1, h, w]` (or `[1, 1, 1]` outside patch mode).
    pub fn forward(&self, g: &mut Graph<T>, p: &Bound, x: Var) -> Result<Var> {
        let (c, _, _) = g.value(x).chw();
        if c != self.in_channels {
            return Err(Error::shape(&[self.in_channels], &[c]));
        }
        let last = self.convs.len() - 1;
        let mut y = x;
        for (i, conv) in self.convs.iter().enumerate() {
            y = conv.forward(g, p, y)?;
            if i == last {
                break;
            }
            if i > 0 {
                y = g.instance_norm(y);
            }
            y = g.leaky_relu(y, LEAK);
        }
        if !self.config.patch_mode {
            y = g.global_mean(y);
        }
        Ok(y)
    }
}
