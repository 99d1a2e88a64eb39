//! Acceptance harness. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any gating criterion fails. Set `ACCEPTANCE_ONLY=1,3,7` to run
//! a subset.

use std::collections::{HashSet, VecDeque};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seuda::adaptation::{
    lr_at, train_adaptation, train_adaptation_with, AdaptationConfig, AdaptationState, DiscriminatorConfig,
    GeneratorConfig, ImagePool, LossReport, LossWeights, LrSchedule,
};
use seuda::baselines::{build_reference_histogram, fine_tune_stl, run_setting, Setting, SettingInputs, StlOptions};
use seuda::checkpoint::Checkpoint;
use seuda::data::{preprocess_dataset, split_with, Dataset, Domain, Image, LabelMap, PhantomConfig, SplitTag};
use seuda::metrics::{asd, overlap_metrics, postprocess};
use seuda::nn::{Graph, ParamSet, Tensor};
use seuda::segmenter::{image_to_tensor, train_segmenter, Segmenter, SegmenterConfig, TrainOptions};
use seuda::stability::{run_stability, StudyData};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    type Criterion = (u32, &'static str, bool, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        (1, "metric oracle equivalence", true, metric_oracle),
        (2, "gradient checks", true, gradient_checks),
        (3, "total objective recombination", true, objective_recombination),
        (4, "frozen segmenter invariance", true, frozen_segmenter),
        (5, "toy end-to-end trend", true, toy_trend),
        (6, "CyUDA equivalence at lambda 0", true, cyuda_equivalence),
        (7, "pool and schedule", true, pool_and_schedule),
        (8, "stability trend (soft)", false, stability_trend),
        (9, "post-processing contract", true, postprocess_contract),
    ];
    let mut failed = Vec::new();
    for (id, name, gating, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let out = run();
        let verdict = match (out.pass, gating) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "FAIL (reported, not gating)",
        };
        println!(
            "criterion {id} [{verdict}] {name}: {} ({:.1}s)",
            out.detail,
            t.elapsed().as_secs_f64()
        );
        if !out.pass && gating {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all gating criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------- shared data

fn random_labels(rng: &mut ChaCha8Rng, h: usize, w: usize) -> LabelMap {
    let density: f64 = rng.random_range(0.0..0.7);
    let labels = (0..h * w)
        .map(|_| {
            if rng.random_bool(density) {
                rng.random_range(1..=2u8)
            } else {
                0
            }
        })
        .collect();
    LabelMap::new(h, w, labels).unwrap()
}

fn blob_labels(rng: &mut ChaCha8Rng, h: usize, w: usize) -> LabelMap {
    let mut l = LabelMap::background(h, w);
    for class in 1..=2u8 {
        let cy = rng.random_range(0.2..0.8) * h as f64;
        let cx = rng.random_range(0.2..0.8) * w as f64;
        let ry = rng.random_range(1.0..0.4 * h as f64);
        let rx = rng.random_range(1.0..0.4 * w as f64);
        for y in 0..h {
            for x in 0..w {
                let dy = (y as f64 - cy) / ry;
                let dx = (x as f64 - cx) / rx;
                if dy * dy + dx * dx <= 1.0 {
                    l.set(y, x, class);
                }
            }
        }
    }
    l
}

fn random_image(rng: &mut ChaCha8Rng, size: usize, domain: Domain) -> Image {
    let px = (0..size * size).map(|_| rng.random_range(0.0..255.0f32)).collect();
    Image::new(size, size, px, domain).unwrap()
}

/// Phantom studies preprocessed to `size`.
fn phantoms(size: usize, n_source: usize, n_target: usize, seed: u64) -> (Dataset, Dataset) {
    let cfg = PhantomConfig {
        source_seed: 2 * seed + 1,
        target_seed: 2 * seed + 2,
        n_source,
        n_target,
        ..Default::default()
    };
    let (s, t) = cfg.generate().unwrap();
    if size == cfg.working_size {
        (s, t)
    } else {
        (preprocess_dataset(&s, size).unwrap(), preprocess_dataset(&t, size).unwrap())
    }
}

fn sub(ds: &Dataset, range: std::ops::Range<usize>, split: SplitTag) -> Dataset {
    Dataset::new(ds.items[range].to_vec(), ds.domain, split).unwrap()
}

fn tiny_adaptation(size: usize, lambda_sem: f64) -> AdaptationConfig {
    AdaptationConfig {
        working_size: size,
        weights: LossWeights {
            lambda_sem,
            ..Default::default()
        },
        generator: GeneratorConfig {
            encoder_downsamples: 1,
            residual_blocks: 1,
            base_channels: 2,
        },
        discriminator: DiscriminatorConfig {
            layers: 3,
            base_channels: 2,
            patch_mode: true,
        },
        schedule: LrSchedule {
            base_lr: 0.002,
            hold: 5,
            decay: 5,
        },
        pool_capacity: 5,
        ..Default::default()
    }
}

fn frozen_segmenter_for(size: usize, seed: u64) -> Segmenter<f32> {
    let mut s = Segmenter::<f32>::build(SegmenterConfig::toy(size), seed).unwrap();
    s.freeze();
    s
}

fn params_bits<T: seuda::nn::Float>(p: &ParamSet<T>) -> Vec<u64> {
    p.tensors()
        .iter()
        .flat_map(|t| t.data().iter().map(|v| v.as_f64().to_bits()))
        .collect()
}

// ---------------------------------------------------------------- criterion 1

fn oracle_boundary(mask: &HashSet<(i64, i64)>, h: i64, w: i64) -> Vec<(i64, i64)> {
    let mut b: Vec<(i64, i64)> = mask
        .iter()
        .copied()
        .filter(|&(y, x)| {
            [(y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)]
                .iter()
                .any(|&(ny, nx)| ny < 0 || nx < 0 || ny >= h || nx >= w || !mask.contains(&(ny, nx)))
        })
        .collect();
    b.sort();
    b
}

fn oracle_asd(a: &[(i64, i64)], b: &[(i64, i64)], spacing: f64) -> f64 {
    let nearest = |p: &(i64, i64), set: &[(i64, i64)]| {
        set.iter()
            .map(|q| (((p.0 - q.0).pow(2) + (p.1 - q.1).pow(2)) as f64).sqrt())
            .fold(f64::INFINITY, f64::min)
    };
    let s1: f64 = a.iter().map(|p| nearest(p, b)).sum();
    let s2: f64 = b.iter().map(|p| nearest(p, a)).sum();
    (s1 + s2) / (a.len() + b.len()) as f64 * spacing
}

fn metric_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (h, w) = (16usize, 16usize);
    let mut mismatches = Vec::new();
    let mut asd_checked = 0;
    let mut max_asd_err: f64 = 0.0;
    for pair in 0..200 {
        let (pred, gt) = if pair % 2 == 0 {
            (random_labels(&mut rng, h, w), random_labels(&mut rng, h, w))
        } else {
            (blob_labels(&mut rng, h, w), blob_labels(&mut rng, h, w))
        };
        let spacing = rng.random_range(0.1..2.0);
        for class in 1..=2u8 {
            let set = |l: &LabelMap| -> HashSet<(i64, i64)> {
                (0..h)
                    .flat_map(|y| (0..w).map(move |x| (y, x)))
                    .filter(|&(y, x)| l.get(y, x) == class)
                    .map(|(y, x)| (y as i64, x as i64))
                    .collect()
            };
            let (p, g) = (set(&pred), set(&gt));
            let tp = p.intersection(&g).count() as f64;
            let (np, ng) = (p.len() as f64, g.len() as f64);
            let expect = if p.is_empty() && g.is_empty() {
                (100.0, 100.0, 100.0)
            } else {
                (
                    100.0 * 2.0 * tp / (np + ng),
                    if g.is_empty() { 0.0 } else { 100.0 * tp / ng },
                    if p.is_empty() { 0.0 } else { 100.0 * tp / np },
                )
            };
            let o = overlap_metrics(&pred, &gt, class).unwrap();
            if (o.dice, o.recall, o.precision) != expect {
                mismatches.push(format!("pair {pair} class {class} overlap {o:?} vs {expect:?}"));
            }
            match asd(&pred, &gt, class, spacing) {
                Ok(v) => {
                    if p.is_empty() || g.is_empty() {
                        mismatches.push(format!("pair {pair} class {class}: asd defined on an empty mask"));
                        continue;
                    }
                    let want = oracle_asd(&oracle_boundary(&p, 16, 16), &oracle_boundary(&g, 16, 16), spacing);
                    let err = (v - want).abs();
                    max_asd_err = max_asd_err.max(err);
                    asd_checked += 1;
                    if err > 1e-9 {
                        mismatches.push(format!("pair {pair} class {class} asd {v} vs oracle {want}"));
                    }
                }
                Err(_) => {
                    if !(p.is_empty() || g.is_empty()) {
                        mismatches.push(format!("pair {pair} class {class}: asd failed on non-empty masks"));
                    }
                }
            }
        }
    }
    let elapsed = t.elapsed();
    let pass = mismatches.is_empty() && elapsed < Duration::from_secs(10) && asd_checked > 0;
    outcome(
        pass,
        format!(
            "200 pairs, {asd_checked} ASD comparisons, max ASD error {max_asd_err:.2e} (tol 1e-9), {} mismatches{}, runtime {:.2}s (limit 10s)",
            mismatches.len(),
            mismatches.first().map(|m| format!(" first: {m}")).unwrap_or_default(),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- criterion 2

const FD_STEP: f64 = 1e-6;
const FD_TOL: f64 = 1e-4;
/// Relative errors are taken against at least this magnitude. Central
/// differences of an O(1) loss at `FD_STEP` carry about 1e-10 of round-off,
/// so gradients below this size are effectively checked to 1e-9 absolute.
const FD_FLOOR: f64 = 1e-5;

struct FdStats {
    checked: usize,
    worst: f64,
    /// Analytic and numeric values at the worst entry.
    at: (f64, f64),
}

/// Central differences of `loss` with respect to every entry of `params`
/// against `analytic`.
fn fd_check(
    params: &mut ParamSet<f64>,
    analytic: &[Tensor<f64>],
    mut loss: impl FnMut(&ParamSet<f64>) -> f64,
) -> FdStats {
    let mut worst: f64 = 0.0;
    let mut at = (0.0, 0.0);
    let mut checked = 0;
    for ti in 0..params.len() {
        for k in 0..params.tensors()[ti].len() {
            let orig = params.tensors()[ti].data()[k];
            params.tensors_mut()[ti].data_mut()[k] = orig + FD_STEP;
            let up = loss(params);
            params.tensors_mut()[ti].data_mut()[k] = orig - FD_STEP;
            let down = loss(params);
            params.tensors_mut()[ti].data_mut()[k] = orig;
            let fd = (up - down) / (2.0 * FD_STEP);
            let a = analytic[ti].data()[k];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(FD_FLOOR);
            if rel > worst {
                worst = rel;
                at = (a, fd);
            }
            checked += 1;
        }
    }
    FdStats { checked, worst, at }
}

fn miniature_segmenter(seed: u64) -> Segmenter<f64> {
    let cfg = SegmenterConfig {
        base_channels: 4,
        stage_blocks: vec![1],
        downsample_stages: 1,
        dilated_stage_rates: vec![],
        head_rates: [1, 2, 3, 4],
        num_classes: 3,
        working_size: 8,
    };
    Segmenter::<f64>::build(cfg, seed).unwrap()
}

fn miniature_adaptation() -> AdaptationConfig {
    AdaptationConfig {
        working_size: 8,
        generator: GeneratorConfig {
            encoder_downsamples: 1,
            residual_blocks: 1,
            base_channels: 2,
        },
        discriminator: DiscriminatorConfig {
            layers: 3,
            base_channels: 1,
            patch_mode: true,
        },
        ..Default::default()
    }
}

fn adaptation_numel(s: &AdaptationState<f64>) -> usize {
    s.g_ts.params.numel()
        + s.g_st.params.numel()
        + s.d_s.params.numel()
        + s.d_t.params.numel()
        + s.d_m.as_ref().map_or(0, |d| d.params.numel())
}

/// Smallest `|G_st(G_ts(x_t)) - x_t|` and `|G_ts(G_st(x_s)) - x_s|` over all pixels.
fn min_cycle_gap(s: &AdaptationState<f64>, x_s: &Tensor<f64>, x_t: &Tensor<f64>) -> f64 {
    let mut g = Graph::new();
    let p_ts = s.g_ts.params.bind(&mut g, false);
    let p_st = s.g_st.params.bind(&mut g, false);
    let xs = g.constant(x_s.clone());
    let xt = g.constant(x_t.clone());
    let fs = s.g_ts.forward(&mut g, &p_ts, xt).unwrap();
    let rt = s.g_st.forward(&mut g, &p_st, fs).unwrap();
    let ft = s.g_st.forward(&mut g, &p_st, xs).unwrap();
    let rs = s.g_ts.forward(&mut g, &p_ts, ft).unwrap();
    let gap = |a: &Tensor<f64>, b: &Tensor<f64>| {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(u, v)| (u - v).abs())
            .fold(f64::INFINITY, f64::min)
    };
    gap(g.value(rt), x_t).min(gap(g.value(rs), x_s))
}

fn gradient_checks() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut lines = Vec::new();
    let mut pass = true;
    let mut record = |name: &str, numel: usize, st: FdStats, lines: &mut Vec<String>| {
        let ok = st.worst < FD_TOL && st.checked > 0;
        pass &= ok;
        lines.push(format!(
            "{name}: {} grads of {numel} params, worst rel err {:.2e} (analytic {:.4e} vs numeric {:.4e})",
            st.checked, st.worst, st.at.0, st.at.1
        ));
    };

    // Cross-entropy through the segmenter.
    let seg = miniature_segmenter(5);
    let img = random_image(&mut rng, 8, Domain::Source);
    let gt = blob_labels(&mut rng, 8, 8);
    let (_, grads) = seg.loss_and_grads(&img, &gt).unwrap();
    let mut probe = seg.clone();
    let numel = seg.params().numel();
    let mut params = seg.params().clone();
    let st = fd_check(&mut params, &grads, |p| {
        *probe.params_mut().unwrap() = p.clone();
        probe.loss_and_grads(&img, &gt).unwrap().0
    });
    record("cross-entropy", numel, st, &mut lines);

    // Generator-side terms. Pick inputs whose cycle residuals stay clear of
    // the L1 kink.
    let cfg = miniature_adaptation();
    let mut frozen = miniature_segmenter(6);
    frozen.freeze();
    let mut chosen = None;
    for seed in 0..50u64 {
        let state = AdaptationState::<f64>::build(&cfg, seed).unwrap();
        let x_s = image_to_tensor::<f64>(&random_image(&mut rng, 8, Domain::Source));
        let x_t = image_to_tensor::<f64>(&random_image(&mut rng, 8, Domain::Target));
        if min_cycle_gap(&state, &x_s, &x_t) > 1e-3 {
            chosen = Some((state, x_s, x_t));
            break;
        }
    }
    let Some((state, x_s, x_t)) = chosen else {
        return outcome(false, "no kink-free point found for the cycle loss");
    };
    let numel = adaptation_numel(&state);
    let terms: [(&str, [f64; 4]); 3] = [
        ("g-side LSGAN", [1.0, 0.5, 0.0, 0.0]),
        ("cycle", [0.0, 0.0, 1.0, 0.0]),
        ("semantic", [0.0, 0.0, 0.0, 1.0]),
    ];
    for (name, coeffs) in terms {
        let pass_ = state.generator_pass(&frozen, &x_s, &x_t, coeffs).unwrap();
        let objective = |s: &AdaptationState<f64>| {
            let c = s.generator_pass(&frozen, &x_s, &x_t, coeffs).unwrap().components;
            coeffs[0] * c.gan_st + coeffs[1] * c.gan_ts + coeffs[2] * c.cyc + coeffs[3] * c.sem
        };
        let mut probe = state.clone();
        let mut p_ts = state.g_ts.params.clone();
        let st_ts = fd_check(&mut p_ts, &pass_.grads_ts, |p| {
            probe.g_ts.params = p.clone();
            objective(&probe)
        });
        let mut probe = state.clone();
        let mut p_st = state.g_st.params.clone();
        let st_st = fd_check(&mut p_st, &pass_.grads_st, |p| {
            probe.g_st.params = p.clone();
            objective(&probe)
        });
        let merged = FdStats {
            checked: st_ts.checked + st_st.checked,
            worst: st_ts.worst.max(st_st.worst),
            at: if st_ts.worst >= st_st.worst { st_ts.at } else { st_st.at },
        };
        record(name, numel, merged, &mut lines);
    }
    let elapsed = t.elapsed();
    let within = elapsed < Duration::from_secs(120);
    outcome(
        pass && within,
        format!(
            "{} (tol {FD_TOL:e}); runtime {:.1}s (limit 120s)",
            lines.join("; "),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- criterion 3

fn objective_recombination() -> Outcome {
    let (src, tgt) = phantoms(16, 10, 10, 3);
    let seg = frozen_segmenter_for(16, 3);
    let cfg = tiny_adaptation(16, 0.5);
    let w = cfg.weights;
    let expected_weights = (w.alpha, w.beta, w.lambda_sem) == (0.5, 10.0, 0.5);
    let mut state = AdaptationState::<f32>::build(&cfg, 3).unwrap();
    let mut worst: f64 = 0.0;
    for step in 0..100 {
        let a = &src.items[step % src.len()];
        let b = &tgt.items[(step * 7) % tgt.len()];
        let r: LossReport = state.train_step(&seg, &a.image, a.label().unwrap(), &b.image).unwrap();
        let recombined = r.gan_st + 0.5 * r.gan_ts + 10.0 * r.cyc + 0.5 * r.sem;
        worst = worst.max((r.total - recombined).abs());
    }
    outcome(
        worst <= 1e-6 && expected_weights,
        format!("100 steps, default weights (0.5, 10, 0.5): {expected_weights}, max |total - recombination| {worst:.2e} (tol 1e-6)"),
    )
}

// ---------------------------------------------------------------- criterion 4

fn frozen_segmenter() -> Outcome {
    let (src, tgt) = phantoms(16, 10, 10, 4);
    let seg = frozen_segmenter_for(16, 4);
    let before = seg.to_checkpoint().unwrap().to_bytes().unwrap();
    let cfg = tiny_adaptation(16, 0.5);
    let state = AdaptationState::<f32>::build(&cfg, 4).unwrap();
    let (state, hist) = train_adaptation(&state, &seg, &src, &tgt.without_labels(), 50).unwrap();
    let steps: usize = hist.iter().map(|h| h.steps).sum();
    let restored = Segmenter::<f32>::from_checkpoint(&Checkpoint::from_bytes(&before).unwrap()).unwrap();
    let identical = params_bits(seg.params()) == params_bits(restored.params())
        && seg.to_checkpoint().unwrap().to_bytes().unwrap() == before;
    outcome(
        identical && steps == 500 && state.epoch == 50,
        format!("{steps} adaptation steps, segmenter bit-identical to its checkpoint: {identical}"),
    )
}

// ---------------------------------------------------------------- criterion 5

struct ToyRun {
    s_test: f64,
    no_da: f64,
    hist_m: f64,
    stl: f64,
    seuda: f64,
    cycle_first: f64,
    cycle_last: f64,
    src_mean: f64,
    tgt_mean: f64,
    transformed_mean: f64,
}

const TOY_SEG_EPOCHS: usize = 15;
const TOY_STL_EPOCHS: usize = 15;
const TOY_UDA_EPOCHS: usize = 20;

fn mean_intensity<'a>(images: impl Iterator<Item = &'a Image>) -> f64 {
    let v: Vec<f64> = images.map(|i| i.mean()).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn toy_run(seed: u64) -> ToyRun {
    let (src, tgt) = phantoms(64, 60, 50, 100 + seed);
    let (s_train, s_val, s_test) = split_with(&src, (4, 1, 1), seed).unwrap();
    let t_train = sub(&tgt, 0..40, SplitTag::Train);
    let t_test = sub(&tgt, 40..50, SplitTag::Test);

    let model = Segmenter::<f32>::build(SegmenterConfig::toy(64), seed).unwrap();
    let opts = TrainOptions {
        epochs: TOY_SEG_EPOCHS,
        seed,
        ..Default::default()
    };
    let (mut seg, _) = train_segmenter(&model, &s_train, &s_val, &opts).unwrap();
    let stl_opts = StlOptions {
        train: TrainOptions {
            epochs: TOY_STL_EPOCHS,
            seed,
            ..Default::default()
        },
        ..Default::default()
    };
    let (stl, _) = fine_tune_stl(&seg, &t_train, &t_train, &stl_opts).unwrap();
    seg.freeze();

    let cfg = AdaptationConfig {
        schedule: LrSchedule {
            base_lr: 0.002,
            hold: TOY_UDA_EPOCHS / 2,
            decay: TOY_UDA_EPOCHS - TOY_UDA_EPOCHS / 2,
        },
        ..Default::default()
    };
    let state = AdaptationState::<f32>::build(&cfg, seed).unwrap();
    let (state, hist) =
        train_adaptation_with(&state, &seg, &s_train, &t_train.without_labels(), TOY_UDA_EPOCHS, |_| {}).unwrap();
    let k = hist.len().min(10);
    let cyc = |h: &[seuda::adaptation::EpochLog]| h.iter().map(|e| e.losses.cyc).sum::<f64>() / h.len() as f64;

    let reference = build_reference_histogram(&s_train, 256).unwrap();
    let inputs = SettingInputs {
        segmenter: Some(&seg),
        source_test: Some(&s_test),
        target_test: Some(&t_test),
        reference: Some(&reference),
        stl_model: Some(&stl),
        seuda: Some(&state),
        ..Default::default()
    };
    let dice = |s: Setting| run_setting(s, &inputs).unwrap().mean_dice();
    let transformed: Vec<Image> = t_test.images().map(|i| state.transform(i).unwrap()).collect();
    ToyRun {
        s_test: dice(Setting::STest),
        no_da: dice(Setting::TNoDa),
        hist_m: dice(Setting::THistM),
        stl: dice(Setting::TStl),
        seuda: dice(Setting::SeUda),
        cycle_first: cyc(&hist[..k]),
        cycle_last: cyc(&hist[hist.len() - k..]),
        src_mean: mean_intensity(s_test.images()),
        tgt_mean: mean_intensity(t_test.images()),
        transformed_mean: mean_intensity(transformed.iter()),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn toy_trend() -> Outcome {
    let t = Instant::now();
    let runs: Vec<ToyRun> = (0..3).map(toy_run).collect();
    let m = |f: fn(&ToyRun) -> f64| median(runs.iter().map(f).collect());
    let (s_test, no_da, hist_m, stl, seuda) = (
        m(|r| r.s_test),
        m(|r| r.no_da),
        m(|r| r.hist_m),
        m(|r| r.stl),
        m(|r| r.seuda),
    );
    let checks = [
        ("S-test >= 95", s_test >= 95.0),
        ("T-noDA <= S-test - 10", no_da <= s_test - 10.0),
        ("SeUDA >= T-noDA + 5", seuda >= no_da + 5.0),
        ("T-HistM <= SeUDA", hist_m <= seuda),
        ("T-STL >= SeUDA - 3", stl >= seuda - 3.0),
    ];
    let elapsed = t.elapsed();
    let within = elapsed < Duration::from_secs(45 * 60);
    for (i, r) in runs.iter().enumerate() {
        println!(
            "  toy seed {i}: S-test {:.2} T-noDA {:.2} T-HistM {:.2} T-STL {:.2} SeUDA {:.2}",
            r.s_test, r.no_da, r.hist_m, r.stl, r.seuda
        );
        let halved = r.cycle_last <= 0.5 * r.cycle_first;
        println!(
            "  toy seed {i}: cycle loss first-10 mean {:.4}, last-10 mean {:.4} ({} epochs; halved: {halved})",
            r.cycle_first, r.cycle_last, TOY_UDA_EPOCHS
        );
        let closer = (r.transformed_mean - r.src_mean).abs() < (r.tgt_mean - r.src_mean).abs();
        println!(
            "  toy seed {i}: mean intensity source {:.1}, target {:.1}, transformed target {:.1} (closer to source: {closer})",
            r.src_mean, r.tgt_mean, r.transformed_mean
        );
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let between = no_da <= hist_m && hist_m <= seuda;
    outcome(
        failed.is_empty() && within,
        format!(
            "medians over 3 seeds: S-test {s_test:.2}, T-noDA {no_da:.2}, T-HistM {hist_m:.2} (between T-noDA and SeUDA: {between}), T-STL {stl:.2}, SeUDA {seuda:.2}; failed checks: {failed:?}; runtime {:.1} min (limit 45)",
            elapsed.as_secs_f64() / 60.0
        ),
    )
}

// ---------------------------------------------------------------- criterion 6

fn cyuda_equivalence() -> Outcome {
    let (src, tgt) = phantoms(16, 8, 8, 6);
    let seg = frozen_segmenter_for(16, 6);
    let with_dm = tiny_adaptation(16, 0.0);
    let without_dm = AdaptationConfig {
        semantic_adversary: false,
        ..with_dm.clone()
    };
    let mut a = AdaptationState::<f32>::build(&with_dm, 9).unwrap();
    let mut b = AdaptationState::<f32>::build(&without_dm, 9).unwrap();
    let has_dm = a.d_m.is_some() && b.d_m.is_none();
    let dm_before = a.d_m.as_ref().map(|d| params_bits(&d.params));
    let mut diverged_at = None;
    for step in 0..60 {
        let s = &src.items[step % src.len()];
        let t = &tgt.items[(step * 3 + 1) % tgt.len()];
        let ra = a.train_step(&seg, &s.image, s.label().unwrap(), &t.image).unwrap();
        let rb = b.train_step(&seg, &s.image, s.label().unwrap(), &t.image).unwrap();
        let same = params_bits(&a.g_ts.params) == params_bits(&b.g_ts.params)
            && params_bits(&a.g_st.params) == params_bits(&b.g_st.params)
            && ra.components() == rb.components();
        if !same && diverged_at.is_none() {
            diverged_at = Some(step);
        }
    }
    // Full epochs through the shuffling driver as well.
    let a0 = AdaptationState::<f32>::build(&with_dm, 10).unwrap();
    let b0 = AdaptationState::<f32>::build(&without_dm, 10).unwrap();
    let (a1, ha) = train_adaptation(&a0, &seg, &src, &tgt, 3).unwrap();
    let (b1, hb) = train_adaptation(&b0, &seg, &src, &tgt, 3).unwrap();
    let driver_same = params_bits(&a1.g_ts.params) == params_bits(&b1.g_ts.params)
        && params_bits(&a1.g_st.params) == params_bits(&b1.g_st.params)
        && ha.iter().zip(&hb).all(|(x, y)| x.losses.components() == y.losses.components());
    let dm_idle = a.d_m.as_ref().map(|d| params_bits(&d.params)) == dm_before;
    outcome(
        has_dm && diverged_at.is_none() && driver_same && dm_idle,
        format!(
            "60 manual steps identical: {}, 3 driver epochs identical: {driver_same}, D_m untouched: {dm_idle}",
            diverged_at.map_or("yes".to_string(), |s| format!("no (step {s})"))
        ),
    )
}

// ---------------------------------------------------------------- criterion 7

fn pool_and_schedule() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut problems = Vec::new();
    for trial in 0..50u64 {
        let cap = rng.random_range(0..12usize);
        let mut pool = ImagePool::<f32>::new(cap, trial, 11);
        let n = rng.random_range(1..60usize);
        for i in 0..n {
            let fresh = Tensor::from_vec(&[1, 1, 1], vec![i as f32]).unwrap();
            let got = pool.query(fresh);
            if pool.len() > cap {
                problems.push(format!("trial {trial}: {} items with capacity {cap}", pool.len()));
            }
            if (i < cap || cap == 0) && got.data()[0] != i as f32 {
                problems.push(format!("trial {trial}: fill-phase query {i} returned {}", got.data()[0]));
            }
        }
    }
    let (base, hold, decay) = (0.002, 100, 100);
    let start = lr_at(0, base, hold, decay);
    let end = lr_at(hold + decay, base, hold, decay);
    let seq: Vec<f64> = (0..=400).map(|e| lr_at(e, base, hold, decay)).collect();
    let monotone = seq.windows(2).all(|w| w[1] <= w[0]);
    if start != 0.002 {
        problems.push(format!("lr_at(0) = {start}"));
    }
    if end != 0.0 {
        problems.push(format!("lr_at(hold+decay) = {end}"));
    }
    if !monotone {
        problems.push("schedule increases somewhere".into());
    }
    outcome(
        problems.is_empty(),
        format!(
            "50 random pool traces, lr_at(0)={start}, lr_at(200)={end}, non-increasing over 0..=400: {monotone}; {} problems{}",
            problems.len(),
            problems.first().map(|p| format!(" first: {p}")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------- criterion 8

const STABILITY_EPOCHS: usize = 5;

fn stability_trend() -> Outcome {
    let (src, tgt) = phantoms(64, 30, 30, 800);
    let (s_train, s_val, _) = split_with(&src, (4, 1, 1), 0).unwrap();
    let t_train = sub(&tgt, 0..20, SplitTag::Train).without_labels();
    let t_test = sub(&tgt, 20..30, SplitTag::Test);
    let model = Segmenter::<f32>::build(SegmenterConfig::toy(64), 8).unwrap();
    let opts = TrainOptions {
        epochs: TOY_SEG_EPOCHS,
        seed: 8,
        ..Default::default()
    };
    let (mut seg, _) = train_segmenter(&model, &s_train, &s_val, &opts).unwrap();
    seg.freeze();
    let cfg = AdaptationConfig {
        schedule: LrSchedule {
            base_lr: 0.002,
            hold: 3,
            decay: 2,
        },
        ..Default::default()
    };
    let mut wins = 0;
    let mut rows = Vec::new();
    for rep in 0..3u64 {
        let seeds: Vec<u64> = (0..5).map(|i| 1000 * (rep + 1) + i).collect();
        let data = StudyData {
            segmenter: &seg,
            source_train: &s_train,
            target_train: &t_train,
            target_test: &t_test,
        };
        let report = run_stability(&cfg, &[0.0, 0.5], &seeds, STABILITY_EPOCHS, data).unwrap();
        let s0 = report.entry(0.0).unwrap();
        let s5 = report.entry(0.5).unwrap();
        let ok = s5.dice_std <= s0.dice_std;
        wins += ok as usize;
        rows.push(format!(
            "rep {rep}: std {:.3} (lambda 0.5) vs {:.3} (lambda 0), means {:.2} vs {:.2}",
            s5.dice_std, s0.dice_std, s5.dice_mean, s0.dice_mean
        ));
    }
    outcome(
        wins >= 2,
        format!("{wins}/3 repetitions with std(lambda 0.5) <= std(lambda 0); {}", rows.join("; ")),
    )
}

// ---------------------------------------------------------------- criterion 9

fn oracle_components(mask: &[bool], h: usize, w: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; h * w];
    let mut comps = Vec::new();
    for start in 0..h * w {
        if !mask[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(p) = queue.pop_front() {
            comp.push(p);
            let (y, x) = (p / w, p % w);
            let mut nb = Vec::new();
            if y > 0 {
                nb.push(p - w);
            }
            if y + 1 < h {
                nb.push(p + w);
            }
            if x > 0 {
                nb.push(p - 1);
            }
            if x + 1 < w {
                nb.push(p + 1);
            }
            for q in nb {
                if mask[q] && !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            }
        }
        comps.push(comp);
    }
    comps
}

fn oracle_holes(mask: &[bool], h: usize, w: usize) -> usize {
    let complement: Vec<bool> = mask.iter().map(|&m| !m).collect();
    oracle_components(&complement, h, w)
        .iter()
        .filter(|c| !c.iter().any(|&p| p / w == 0 || p / w == h - 1 || p % w == 0 || p % w == w - 1))
        .count()
}

fn noisy_prediction(rng: &mut ChaCha8Rng, h: usize, w: usize) -> LabelMap {
    let mut l = blob_labels(rng, h, w);
    let flip = rng.random_range(0.0..0.3);
    for p in 0..h * w {
        if rng.random_bool(flip) {
            l.labels[p] = rng.random_range(0..=2u8);
        }
    }
    l
}

fn postprocess_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let (h, w) = (32, 32);
    let mut problems = Vec::new();
    for case in 0..100 {
        let pred = noisy_prediction(&mut rng, h, w);
        let out = postprocess(&pred);
        for class in 1..=2u8 {
            let mask = out.mask(class);
            let comps = oracle_components(&mask, h, w).len();
            let holes = oracle_holes(&mask, h, w);
            if comps > 1 || holes > 0 {
                problems.push(format!("case {case} class {class}: {comps} components, {holes} holes"));
            }
        }
        if postprocess(&out) != out {
            problems.push(format!("case {case}: not idempotent"));
        }
    }
    outcome(
        problems.is_empty(),
        format!(
            "100 noisy 32x32 predictions, {} violations{}",
            problems.len(),
            problems.first().map(|p| format!(" first: {p}")).unwrap_or_default()
        ),
    )
}
