use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::losses::{smoothed_one_hot, total_objective, LossComponents, LossWeights};
use super::networks::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use super::pool::ImagePool;
use super::schedule::LrSchedule;
use crate::checkpoint::Checkpoint;
use crate::data::{Dataset, Domain, Image, LabelMap, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Float, Graph, ParamSet, Tensor, Var};
use crate::segmenter::{image_to_tensor, Segmenter};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptationConfig {
    pub working_size: usize,
    pub num_classes: usize,
    pub weights: LossWeights,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub schedule: LrSchedule,
    pub adam: AdamConfig,
    pub pool_capacity: usize,
    /// Feed the mask discriminator from a history pool of predicted masks.
    pub mask_pool: bool,
    /// Probability assigned to the labeled class in the real masks shown to
    /// the mask discriminator.
    pub label_smoothing: f64,
    /// Build the mask discriminator at all. Without it the semantic weight
    /// must be zero.
    pub semantic_adversary: bool,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        AdaptationConfig {
            working_size: 64,
            num_classes: NUM_CLASSES,
            weights: LossWeights::default(),
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            schedule: LrSchedule::default(),
            adam: AdamConfig::default(),
            pool_capacity: 50,
            mask_pool: true,
            label_smoothing: 0.9,
            semantic_adversary: true,
        }
    }
}

impl AdaptationConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.generator.validate(self.working_size)?;
        self.discriminator.validate(self.working_size)?;
        if !(self.label_smoothing > 1.0 / self.num_classes as f64 && self.label_smoothing <= 1.0) {
            return Err(Error::Config(format!(
                "label_smoothing {} must lie in (1/C, 1]",
                self.label_smoothing
            )));
        }
        if !self.semantic_adversary && self.weights.lambda_sem != 0.0 {
            return Err(Error::Config("lambda_sem > 0 needs the mask discriminator".into()));
        }
        Ok(())
    }

    fn semantic_active(&self) -> bool {
        self.semantic_adversary && self.weights.lambda_sem > 0.0
    }
}

/// Loss values of one training step (or an epoch mean).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub gan_st: f64,
    pub gan_ts: f64,
    pub cyc: f64,
    pub sem: f64,
    pub total: f64,
    pub d_s: f64,
    pub d_t: f64,
    pub d_m: f64,
}

impl LossReport {
    pub fn components(&self) -> LossComponents {
        LossComponents {
            gan_st: self.gan_st,
            gan_ts: self.gan_ts,
            cyc: self.cyc,
            sem: self.sem,
        }
    }

    fn fields(&self) -> [(&'static str, f64); 8] {
        [
            ("gan_st", self.gan_st),
            ("gan_ts", self.gan_ts),
            ("cyc", self.cyc),
            ("sem", self.sem),
            ("total", self.total),
            ("d_s", self.d_s),
            ("d_t", self.d_t),
            ("d_m", self.d_m),
        ]
    }

    fn check_finite(&self) -> Result<()> {
        match self.fields().into_iter().find(|(_, v)| !v.is_finite()) {
            Some((name, _)) => Err(Error::NonFinite { component: name.into() }),
            None => Ok(()),
        }
    }

    pub fn mean(reports: &[LossReport]) -> LossReport {
        let n = reports.len().max(1) as f64;
        let mut m = LossReport::default();
        for r in reports {
            m.gan_st += r.gan_st / n;
            m.gan_ts += r.gan_ts / n;
            m.cyc += r.cyc / n;
            m.sem += r.sem / n;
            m.total += r.total / n;
            m.d_s += r.d_s / n;
            m.d_t += r.d_t / n;
            m.d_m += r.d_m / n;
        }
        m
    }
}

/// Per-epoch training record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    #[serde(flatten)]
    pub losses: LossReport,
}

/// Generator-side forward/backward result.
#[derive(Clone, Debug)]
pub struct GeneratorPass<T> {
    pub components: LossComponents,
    pub grads_ts: Vec<Tensor<T>>,
    pub grads_st: Vec<Tensor<T>>,
    pub fake_s: Tensor<T>,
    pub fake_t: Tensor<T>,
    /// Segmenter output on `fake_s`, when the semantic term was evaluated.
    pub fake_mask: Option<Tensor<T>>,
}

// Independent random streams derived from the master seed.
const STREAM_G_TS: u64 = 1;
const STREAM_G_ST: u64 = 2;
const STREAM_D_S: u64 = 3;
const STREAM_D_T: u64 = 4;
const STREAM_D_M: u64 = 5;
const STREAM_POOL_S: u64 = 11;
const STREAM_POOL_T: u64 = 12;
const STREAM_POOL_M: u64 = 13;
const STREAM_SHUFFLE: u64 = 21;

fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Both generators, the three discriminators, their optimizers and the
/// history pools.
#[derive(Clone, Debug)]
pub struct AdaptationState<T = f32> {
    pub config: AdaptationConfig,
    pub seed: u64,
    pub epoch: usize,
    pub g_ts: Generator<T>,
    pub g_st: Generator<T>,
    pub d_s: Discriminator<T>,
    pub d_t: Discriminator<T>,
    pub d_m: Option<Discriminator<T>>,
    opt_g_ts: Adam<T>,
    opt_g_st: Adam<T>,
    opt_d_s: Adam<T>,
    opt_d_t: Adam<T>,
    opt_d_m: Option<Adam<T>>,
    pool_s: ImagePool<T>,
    pool_t: ImagePool<T>,
    pool_m: ImagePool<T>,
}

pub fn build_adaptation<T: Float>(config: &AdaptationConfig, seed: u64) -> Result<AdaptationState<T>> {
    AdaptationState::build(config, seed)
}

fn disc_loss<T: Float>(d: &Discriminator<T>, real: Tensor<T>, fake: Tensor<T>) -> Result<(f64, Vec<Tensor<T>>)> {
    let mut g = Graph::new();
    let p = d.params.bind(&mut g, true);
    let r = g.constant(real);
    let f = g.constant(fake);
    let sr = d.forward(&mut g, &p, r)?;
    let sf = d.forward(&mut g, &p, f)?;
    let lr = g.mse_const(sr, 1.0);
    let lf = g.mse_const(sf, 0.0);
    let loss = g.weighted_sum(&[(lr, 0.5), (lf, 0.5)])?;
    let value = g.value(loss).item().as_f64();
    let mut grads = g.backward(loss);
    Ok((value, d.params.collect_grads(&p, &mut grads)))
}

impl<T: Float> AdaptationState<T> {
    pub fn build(config: &AdaptationConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let ws = config.working_size;
        let g_ts = Generator::build(&config.generator, ws, derive_seed(seed, STREAM_G_TS))?;
        let g_st = Generator::build(&config.generator, ws, derive_seed(seed, STREAM_G_ST))?;
        let d_s = Discriminator::build(&config.discriminator, 1, ws, derive_seed(seed, STREAM_D_S))?;
        let d_t = Discriminator::build(&config.discriminator, 1, ws, derive_seed(seed, STREAM_D_T))?;
        let d_m = if config.semantic_adversary {
            Some(Discriminator::build(&config.discriminator, config.num_classes, ws, derive_seed(seed, STREAM_D_M))?)
        } else {
            None
        };
        let adam = |p: &ParamSet<T>| Adam::new(p, config.adam);
        Ok(AdaptationState {
            opt_g_ts: adam(&g_ts.params),
            opt_g_st: adam(&g_st.params),
            opt_d_s: adam(&d_s.params),
            opt_d_t: adam(&d_t.params),
            opt_d_m: d_m.as_ref().map(|d| adam(&d.params)),
            pool_s: ImagePool::new(config.pool_capacity, seed, STREAM_POOL_S),
            pool_t: ImagePool::new(config.pool_capacity, seed, STREAM_POOL_T),
            pool_m: ImagePool::new(config.pool_capacity, seed, STREAM_POOL_M),
            config: config.clone(),
            seed,
            epoch: 0,
            g_ts,
            g_st,
            d_s,
            d_t,
            d_m,
        })
    }

    pub fn lr(&self) -> f64 {
        self.config.schedule.at(self.epoch)
    }

    pub fn pools(&self) -> [&ImagePool<T>; 3] {
        [&self.pool_s, &self.pool_t, &self.pool_m]
    }

    fn check_input(&self, x: &Tensor<T>, channels: usize) -> Result<()> {
        let ws = self.config.working_size;
        if x.shape() != [channels, ws, ws] {
            return Err(Error::shape(&[channels, ws, ws], x.shape()));
        }
        Ok(())
    }

    /// Evaluates `c[0]·gan_st + c[1]·gan_ts + c[2]·cyc + c[3]·sem` and its
    /// gradients for both generators. Discriminators and the segmenter enter
    /// as constants. The semantic term is only evaluated when `c[3] != 0`.
    pub fn generator_pass(
        &self,
        segmenter: &Segmenter<T>,
        x_s: &Tensor<T>,
        x_t: &Tensor<T>,
        coeffs: [f64; 4],
    ) -> Result<GeneratorPass<T>> {
        self.check_input(x_s, 1)?;
        self.check_input(x_t, 1)?;
        let mut g = Graph::new();
        let p_ts = self.g_ts.params.bind(&mut g, true);
        let p_st = self.g_st.params.bind(&mut g, true);
        let p_ds = self.d_s.params.bind(&mut g, false);
        let p_dt = self.d_t.params.bind(&mut g, false);
        let xs = g.constant(x_s.clone());
        let xt = g.constant(x_t.clone());

        let fake_t = self.g_st.forward(&mut g, &p_st, xs)?;
        let fake_s = self.g_ts.forward(&mut g, &p_ts, xt)?;
        let rec_s = self.g_ts.forward(&mut g, &p_ts, fake_t)?;
        let rec_t = self.g_st.forward(&mut g, &p_st, fake_s)?;

        let score_t = self.d_t.forward(&mut g, &p_dt, fake_t)?;
        let gan_st = g.mse_const(score_t, 1.0);
        let score_s = self.d_s.forward(&mut g, &p_ds, fake_s)?;
        let gan_ts = g.mse_const(score_s, 1.0);
        let cyc_t = g.l1(rec_t, xt)?;
        let cyc_s = g.l1(rec_s, xs)?;
        let cyc = g.weighted_sum(&[(cyc_t, 1.0), (cyc_s, 1.0)])?;

        let mut terms = vec![(gan_st, coeffs[0]), (gan_ts, coeffs[1]), (cyc, coeffs[2])];
        let mut sem: Option<(Var, Var)> = None;
        if coeffs[3] != 0.0 {
            let d_m = self.d_m.as_ref().ok_or_else(|| Error::Config("semantic term needs the mask discriminator".into()))?;
            let p_seg = segmenter.params().bind(&mut g, false);
            let p_dm = d_m.params.bind(&mut g, false);
            let prob = segmenter.forward(&mut g, &p_seg, fake_s)?;
            let score_m = d_m.forward(&mut g, &p_dm, prob)?;
            let s = g.mse_const(score_m, 1.0);
            terms.push((s, coeffs[3]));
            sem = Some((s, prob));
        }
        let total = g.weighted_sum(&terms)?;
        let val = |g: &Graph<T>, v: Var| g.value(v).item().as_f64();
        let components = LossComponents {
            gan_st: val(&g, gan_st),
            gan_ts: val(&g, gan_ts),
            cyc: val(&g, cyc),
            sem: sem.map_or(0.0, |(s, _)| val(&g, s)),
        };
        let mut grads = g.backward(total);
        Ok(GeneratorPass {
            components,
            grads_ts: self.g_ts.params.collect_grads(&p_ts, &mut grads),
            grads_st: self.g_st.params.collect_grads(&p_st, &mut grads),
            fake_s: g.value(fake_s).clone(),
            fake_t: g.value(fake_t).clone(),
            fake_mask: sem.map(|(_, prob)| g.value(prob).clone()),
        })
    }

    /// One full update: both generators on the weighted objective, then the
    /// source, target and mask discriminators in turn.
    pub fn train_step(
        &mut self,
        segmenter: &Segmenter<T>,
        x_s: &Image,
        y_s: &LabelMap,
        x_t: &Image,
    ) -> Result<LossReport> {
        self.train_step_tensors(segmenter, &image_to_tensor(x_s), y_s, &image_to_tensor(x_t))
    }

    pub fn train_step_tensors(
        &mut self,
        segmenter: &Segmenter<T>,
        x_s: &Tensor<T>,
        y_s: &LabelMap,
        x_t: &Tensor<T>,
    ) -> Result<LossReport> {
        if !segmenter.is_frozen() {
            return Err(Error::Config("the segmenter must be frozen during adaptation".into()));
        }
        if segmenter.config().working_size != self.config.working_size {
            return Err(Error::shape(&[self.config.working_size], &[segmenter.config().working_size]));
        }
        let ws = self.config.working_size;
        if y_s.height != ws || y_s.width != ws {
            return Err(Error::shape(&[ws, ws], &[y_s.height, y_s.width]));
        }
        let w = self.config.weights;
        let semantic = self.config.semantic_active();
        let lambda = if semantic { w.lambda_sem } else { 0.0 };
        let lr = self.lr();

        let pass = self.generator_pass(segmenter, x_s, x_t, [1.0, w.alpha, w.beta, lambda])?;
        let mut report = LossReport {
            gan_st: pass.components.gan_st,
            gan_ts: pass.components.gan_ts,
            cyc: pass.components.cyc,
            sem: pass.components.sem,
            total: total_objective(&pass.components, &w),
            ..Default::default()
        };
        report.check_finite()?;
        self.opt_g_ts.update(&mut self.g_ts.params, &pass.grads_ts, lr);
        self.opt_g_st.update(&mut self.g_st.params, &pass.grads_st, lr);

        let fake_s = self.pool_s.query(pass.fake_s);
        let (d_s, grads) = disc_loss(&self.d_s, x_s.clone(), fake_s)?;
        report.d_s = d_s;
        report.check_finite()?;
        self.opt_d_s.update(&mut self.d_s.params, &grads, lr);

        let fake_t = self.pool_t.query(pass.fake_t);
        let (d_t, grads) = disc_loss(&self.d_t, x_t.clone(), fake_t)?;
        report.d_t = d_t;
        report.check_finite()?;
        self.opt_d_t.update(&mut self.d_t.params, &grads, lr);

        if let (true, Some(mask), Some(d_m), Some(opt)) = (semantic, pass.fake_mask, self.d_m.as_mut(), self.opt_d_m.as_mut()) {
            let real = smoothed_one_hot(y_s, self.config.num_classes, self.config.label_smoothing);
            let fake = if self.config.mask_pool { self.pool_m.query(mask) } else { mask };
            let (d_m_loss, grads) = disc_loss(d_m, real, fake)?;
            report.d_m = d_m_loss;
            report.check_finite()?;
            opt.update(&mut d_m.params, &grads, lr);
        }
        Ok(report)
    }

    /// Translates a target image into the source appearance.
    pub fn transform(&self, x_t: &Image) -> Result<Image> {
        let x = image_to_tensor::<T>(x_t);
        self.check_input(&x, 1)?;
        let mut g = Graph::new();
        let p = self.g_ts.params.bind(&mut g, false);
        let xv = g.constant(x);
        let y = self.g_ts.forward(&mut g, &p, xv)?;
        let pixels = g
            .value(y)
            .data()
            .iter()
            .map(|v| ((v.as_f64() + 1.0) * 127.5).clamp(0.0, 255.0) as f32)
            .collect();
        Ok(Image::new(x_t.height, x_t.width, pixels, Domain::Transformed)?.with_spacing(x_t.spacing_mm))
    }
}

/// Runs `epochs` further epochs; see [`train_adaptation_with`].
pub fn train_adaptation<T: Float>(
    state: &AdaptationState<T>,
    segmenter: &Segmenter<T>,
    source: &Dataset,
    target: &Dataset,
    epochs: usize,
) -> Result<(AdaptationState<T>, Vec<EpochLog>)> {
    train_adaptation_with(state, segmenter, source, target, epochs, |_| {})
}

/// Each epoch visits `max(|source|, |target|)` pairs drawn from independent
/// shuffles of both sets (the shorter one wraps around). Target labels are
/// ignored. `on_epoch` sees each epoch's mean losses as they complete.
pub fn train_adaptation_with<T: Float>(
    state: &AdaptationState<T>,
    segmenter: &Segmenter<T>,
    source: &Dataset,
    target: &Dataset,
    epochs: usize,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(AdaptationState<T>, Vec<EpochLog>)> {
    let mut st = state.clone();
    if epochs == 0 {
        return Ok((st, Vec::new()));
    }
    source.require_labels()?;
    if source.is_empty() {
        return Err(Error::Empty("source dataset"));
    }
    if target.is_empty() {
        return Err(Error::Empty("target dataset"));
    }
    let xs: Vec<Tensor<T>> = source.images().map(image_to_tensor).collect();
    let xt: Vec<Tensor<T>> = target.images().map(image_to_tensor).collect();
    let steps = xs.len().max(xt.len());
    let mut history = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(st.seed ^ (st.epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        rng.set_stream(STREAM_SHUFFLE);
        let mut ps: Vec<usize> = (0..xs.len()).collect();
        let mut pt: Vec<usize> = (0..xt.len()).collect();
        ps.shuffle(&mut rng);
        pt.shuffle(&mut rng);
        let lr = st.lr();
        let mut reports = Vec::with_capacity(steps);
        for i in 0..steps {
            let si = ps[i % ps.len()];
            let ti = pt[i % pt.len()];
            let r = st
                .train_step_tensors(segmenter, &xs[si], source.items[si].label()?, &xt[ti])
                .map_err(|e| match e {
                    Error::NonFinite { component } => Error::NonFinite {
                        component: format!("{component} (epoch {}, step {i})", st.epoch),
                    },
                    other => other,
                })?;
            reports.push(r);
        }
        let log = EpochLog {
            epoch: st.epoch,
            lr,
            steps,
            losses: LossReport::mean(&reports),
        };
        on_epoch(&log);
        history.push(log);
        st.epoch += 1;
    }
    Ok((st, history))
}

fn push_params(ck: &mut Checkpoint, prefix: &str, p: &ParamSet<f32>) {
    for (n, t) in p.iter() {
        ck.push(format!("{prefix}/{n}"), t.clone());
    }
}

fn push_adam(ck: &mut Checkpoint, prefix: &str, a: &Adam<f32>) {
    for (i, (m, v)) in a.m.iter().zip(&a.v).enumerate() {
        ck.push(format!("opt.{prefix}/m{i}"), m.clone());
        ck.push(format!("opt.{prefix}/v{i}"), v.clone());
    }
}

fn load_params(ck: &Checkpoint, prefix: &str, p: &mut ParamSet<f32>) -> Result<()> {
    let (names, tensors) = ck.group(&format!("{prefix}/"));
    p.load_from(&names, tensors)
}

fn load_adam(ck: &Checkpoint, prefix: &str, a: &mut Adam<f32>, step: u64) -> Result<()> {
    let (_, tensors) = ck.group(&format!("opt.{prefix}/"));
    if tensors.len() != 2 * a.m.len() {
        return Err(Error::Checkpoint(format!("optimizer state for {prefix} is incomplete")));
    }
    for (i, pair) in tensors.chunks(2).enumerate() {
        if pair[0].shape() != a.m[i].shape() || pair[1].shape() != a.v[i].shape() {
            return Err(Error::shape(a.m[i].shape(), pair[0].shape()));
        }
        a.m[i] = pair[0].clone();
        a.v[i] = pair[1].clone();
    }
    a.step = step;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct PoolMeta {
    stream: u64,
    word_pos: String,
    len: usize,
}

impl AdaptationState<f32> {
    pub const CHECKPOINT_KIND: &'static str = "adaptation";

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let pool_meta = |p: &ImagePool<f32>| {
            let (stream, pos) = p.rng_position();
            PoolMeta {
                stream,
                word_pos: pos.to_string(),
                len: p.len(),
            }
        };
        let meta = serde_json::json!({
            "config": self.config,
            "seed": self.seed,
            "epoch": self.epoch,
            "adam_steps": [
                self.opt_g_ts.step, self.opt_g_st.step, self.opt_d_s.step, self.opt_d_t.step,
                self.opt_d_m.as_ref().map_or(0, |o| o.step),
            ],
            "pools": [pool_meta(&self.pool_s), pool_meta(&self.pool_t), pool_meta(&self.pool_m)],
        });
        let mut ck = Checkpoint::new(Self::CHECKPOINT_KIND, meta);
        push_params(&mut ck, "g_ts", &self.g_ts.params);
        push_params(&mut ck, "g_st", &self.g_st.params);
        push_params(&mut ck, "d_s", &self.d_s.params);
        push_params(&mut ck, "d_t", &self.d_t.params);
        if let (Some(d), Some(o)) = (&self.d_m, &self.opt_d_m) {
            push_params(&mut ck, "d_m", &d.params);
            push_adam(&mut ck, "d_m", o);
        }
        push_adam(&mut ck, "g_ts", &self.opt_g_ts);
        push_adam(&mut ck, "g_st", &self.opt_g_st);
        push_adam(&mut ck, "d_s", &self.opt_d_s);
        push_adam(&mut ck, "d_t", &self.opt_d_t);
        for (tag, pool) in [("s", &self.pool_s), ("t", &self.pool_t), ("m", &self.pool_m)] {
            for (i, t) in pool.buffer().iter().enumerate() {
                ck.push(format!("pool.{tag}/{i:03}"), t.clone());
            }
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind(Self::CHECKPOINT_KIND)?;
        let bad = |what: &str| Error::Checkpoint(format!("missing or malformed {what}"));
        let config: AdaptationConfig = serde_json::from_value(ck.meta["config"].clone())?;
        let seed = ck.meta["seed"].as_u64().ok_or_else(|| bad("seed"))?;
        let mut st = AdaptationState::build(&config, seed)?;
        st.epoch = ck.meta["epoch"].as_u64().ok_or_else(|| bad("epoch"))? as usize;
        let steps: Vec<u64> = serde_json::from_value(ck.meta["adam_steps"].clone())?;
        let pools: Vec<PoolMeta> = serde_json::from_value(ck.meta["pools"].clone())?;
        if steps.len() != 5 || pools.len() != 3 {
            return Err(bad("optimizer or pool metadata"));
        }
        load_params(ck, "g_ts", &mut st.g_ts.params)?;
        load_params(ck, "g_st", &mut st.g_st.params)?;
        load_params(ck, "d_s", &mut st.d_s.params)?;
        load_params(ck, "d_t", &mut st.d_t.params)?;
        load_adam(ck, "g_ts", &mut st.opt_g_ts, steps[0])?;
        load_adam(ck, "g_st", &mut st.opt_g_st, steps[1])?;
        load_adam(ck, "d_s", &mut st.opt_d_s, steps[2])?;
        load_adam(ck, "d_t", &mut st.opt_d_t, steps[3])?;
        if let (Some(d), Some(o)) = (st.d_m.as_mut(), st.opt_d_m.as_mut()) {
            load_params(ck, "d_m", &mut d.params)?;
            load_adam(ck, "d_m", o, steps[4])?;
        }
        let mut restored = Vec::new();
        for (tag, meta) in ["s", "t", "m"].into_iter().zip(&pools) {
            let (_, buffer) = ck.group(&format!("pool.{tag}/"));
            if buffer.len() != meta.len {
                return Err(bad("pool contents"));
            }
            let pos: u128 = meta.word_pos.parse().map_err(|_| bad("pool rng position"))?;
            restored.push(ImagePool::restore(config.pool_capacity, seed, (meta.stream, pos), buffer));
        }
        st.pool_m = restored.pop().expect("three pools");
        st.pool_t = restored.pop().expect("three pools");
        st.pool_s = restored.pop().expect("three pools");
        Ok(st)
    }
}
