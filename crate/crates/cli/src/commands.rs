use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::info;
use serde_json::json;

use seuda::adaptation::{train_adaptation_with, AdaptationState};
use seuda::baselines::{build_reference_histogram, fine_tune_stl, run_setting, Setting, SettingInputs};
use seuda::checkpoint::Checkpoint;
use seuda::data::{load_dataset, preprocess_dataset, save_dataset, split, Dataset, Domain, Item, LabelMap, PhantomConfig, SplitTag};
use seuda::metrics::{evaluate_cases, MetricsReport};
use seuda::segmenter::{train_segmenter, Segmenter};
use seuda::stability::{run_stability, StudyData};

use crate::config::RunConfig;
use crate::Overrides;

struct Layout {
    checkpoints: PathBuf,
    transforms: PathBuf,
    reports: PathBuf,
    logs: PathBuf,
}

impl Layout {
    fn create(out: &Path) -> Result<Self> {
        let l = Layout {
            checkpoints: out.join("checkpoints"),
            transforms: out.join("transforms"),
            reports: out.join("reports"),
            logs: out.join("logs"),
        };
        for d in [&l.checkpoints, &l.transforms, &l.reports, &l.logs] {
            fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
        }
        Ok(l)
    }
}

struct Splits {
    train: Dataset,
    val: Dataset,
    test: Dataset,
}

fn load_splits(c: &RunConfig, manifest: &Path, domain: Domain) -> Result<Splits> {
    let root = manifest.parent().unwrap_or(Path::new("."));
    let raw = load_dataset(root, manifest, domain)?;
    let mut ds = preprocess_dataset(&raw, c.working_size)?;
    if let Some(sp) = c.spacing_mm {
        for it in &mut ds.items {
            it.image.spacing_mm = sp;
        }
    }
    let (train, val, test) = split(&ds, c.seed)?;
    Ok(Splits { train, val, test })
}

fn load_segmenter(path: &Path) -> Result<Segmenter<f32>> {
    let mut s = Segmenter::from_checkpoint(&Checkpoint::load(path)?)?;
    s.freeze();
    Ok(s)
}

fn load_state(path: &Path) -> Result<AdaptationState<f32>> {
    Ok(AdaptationState::from_checkpoint(&Checkpoint::load(path)?)?)
}

fn config_record(c: &RunConfig) -> serde_json::Value {
    json!({ "record": "config", "config": c })
}

fn write_report(layout: &Layout, c: &RunConfig, report: &MetricsReport) -> Result<PathBuf> {
    let path = layout.reports.join(format!("{}.jsonl", report.setting));
    fs::write(&path, report.to_jsonl_with_config(&serde_json::to_value(c)?)?)?;
    fs::write(layout.reports.join(format!("{}.md", report.setting)), MetricsReport::table(std::slice::from_ref(report)))?;
    Ok(path)
}

pub fn make_phantoms(params: Option<&Path>, out_dir: &Path, o: &Overrides) -> Result<()> {
    let mut p: PhantomConfig = match params {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => PhantomConfig::default(),
    };
    if let Some(s) = o.seed {
        p.source_seed = s;
        p.target_seed = s.wrapping_add(1);
    }
    if let Some(w) = o.working_size {
        p.working_size = w;
    }
    if let Some(sp) = o.spacing_mm {
        p.spacing_mm = sp;
    }
    let (src, tgt) = p.generate()?;
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let sm = save_dataset(&src, &out_dir.join("source"))?;
    let tm = save_dataset(&tgt, &out_dir.join("target"))?;
    fs::write(out_dir.join("phantoms.toml"), toml::to_string(&p)?)?;
    println!(
        "wrote {} source and {} target phantoms ({}x{}): {} {}",
        src.len(),
        tgt.len(),
        p.working_size,
        p.working_size,
        sm.display(),
        tm.display()
    );
    Ok(())
}

pub fn train_seg(c: &RunConfig, source: &Path, out_dir: &Path) -> Result<()> {
    let layout = Layout::create(out_dir)?;
    let s = load_splits(c, source, Domain::Source)?;
    let model = Segmenter::<f32>::build(c.segmenter(), c.seed)?;
    info!("segmenter: {} parameters, {} train / {} val cases", model.params().numel(), s.train.len(), s.val.len());
    let (model, history) = train_segmenter(&model, &s.train, &s.val, &c.seg_training())?;
    let mut log = serde_json::to_string(&config_record(c))? + "\n";
    for h in &history {
        log += &serde_json::to_string(&json!({ "record": "epoch", "epoch": h.epoch, "train_loss": h.train_loss, "val_dice": h.val_dice }))?;
        log.push('\n');
    }
    fs::write(layout.logs.join("train-seg.jsonl"), log)?;
    let path = layout.checkpoints.join("segmenter.ckpt");
    model.to_checkpoint()?.save(&path)?;
    let best = history.iter().map(|h| h.val_dice).fold(f64::NAN, f64::max);
    println!("segmenter saved to {} (best val Dice {best:.2})", path.display());
    Ok(())
}

pub fn train_uda(c: &RunConfig, source: &Path, target: &Path, segmenter: &Path, out_dir: &Path, name: &str) -> Result<()> {
    let layout = Layout::create(out_dir)?;
    let seg = load_segmenter(segmenter)?;
    let src = load_splits(c, source, Domain::Source)?;
    let tgt = load_splits(c, target, Domain::Target)?;
    let cfg = c.adaptation();
    let mode = if cfg.weights.lambda_sem == 0.0 { "CyUDA" } else { "SeUDA" };
    let state = AdaptationState::<f32>::build(&cfg, c.seed)?;
    let stem = Path::new(name).file_stem().and_then(|s| s.to_str()).unwrap_or("uda");
    let log_path = layout.logs.join(format!("{stem}.jsonl"));
    let mut log = fs::File::create(&log_path)?;
    writeln!(log, "{}", json!({ "record": "config", "mode": mode, "config": c }))?;
    info!("{mode} training for {} epochs", c.uda_epochs);
    let mut io_err = None;
    let (state, _) = train_adaptation_with(&state, &seg, &src.train, &tgt.train.without_labels(), c.uda_epochs, |e| {
        info!("epoch {} lr {:.6} total {:.4} cyc {:.4} sem {:.4}", e.epoch, e.lr, e.losses.total, e.losses.cyc, e.losses.sem);
        let line = json!({ "record": "epoch", "log": e });
        if let Err(err) = writeln!(log, "{line}") {
            io_err.get_or_insert(err);
        }
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    let path = layout.checkpoints.join(name);
    state.to_checkpoint()?.save(&path)?;
    println!("{mode} model saved to {} (log {})", path.display(), log_path.display());
    Ok(())
}

pub fn transform(c: &RunConfig, uda: &Path, target: &Path, out_dir: &Path) -> Result<()> {
    let layout = Layout::create(out_dir)?;
    let state = load_state(uda)?;
    let tgt = load_splits(c, target, Domain::Target)?;
    let items = tgt
        .test
        .items
        .iter()
        .map(|it| {
            Ok(Item {
                case_id: it.case_id.clone(),
                image: state.transform(&it.image)?,
                label: it.label.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset::new(items, Domain::Transformed, SplitTag::Test)?;
    let stem = uda.file_stem().and_then(|s| s.to_str()).unwrap_or("uda");
    let manifest = save_dataset(&ds, &layout.transforms.join(stem))?;
    println!("transformed {} target test images: {}", ds.len(), manifest.display());
    Ok(())
}

fn masks_by_id(manifest: &Path) -> Result<(HashMap<String, LabelMap>, f64)> {
    let root = manifest.parent().unwrap_or(Path::new("."));
    let ds = load_dataset(root, manifest, Domain::Source)?;
    let spacing = ds.items.first().map_or(1.0, |i| i.image.spacing_mm);
    let mut map = HashMap::new();
    for it in ds.items {
        let l = it.label.ok_or_else(|| anyhow!("{}: case {} has no mask", manifest.display(), it.case_id))?;
        map.insert(it.case_id, l);
    }
    Ok((map, spacing))
}

pub fn eval(c: &RunConfig, pred: &Path, gt: &Path, out_dir: &Path, setting: &str) -> Result<()> {
    let layout = Layout::create(out_dir)?;
    let (preds, _) = masks_by_id(pred)?;
    let (gts, spacing) = masks_by_id(gt)?;
    let spacing = c.spacing_mm.unwrap_or(spacing);
    let mut ids: Vec<String> = gts.keys().cloned().collect();
    ids.sort();
    let p: Vec<LabelMap> = ids
        .iter()
        .map(|id| preds.get(id).cloned().ok_or_else(|| anyhow!("no prediction for case {id}")))
        .collect::<Result<_>>()?;
    let g: Vec<LabelMap> = ids.iter().map(|id| gts[id].clone()).collect();
    let report = evaluate_cases(&ids, &p, &g, spacing, setting)?;
    let path = write_report(&layout, c, &report)?;
    println!("{setting}: mean Dice {:.2} over {} cases ({})", report.mean_dice(), ids.len(), path.display());
    Ok(())
}

pub struct BenchArtifacts {
    pub source: PathBuf,
    pub target: PathBuf,
    pub segmenter: PathBuf,
    pub uda: Option<PathBuf>,
    pub cyuda: Option<PathBuf>,
    pub stl: Option<PathBuf>,
}

pub fn bench(c: &RunConfig, settings: &[String], a: &BenchArtifacts, out_dir: &Path) -> Result<()> {
    if settings.is_empty() {
        bail!("no settings given");
    }
    let settings = settings.iter().map(|s| s.parse::<Setting>()).collect::<seuda::Result<Vec<_>>>()?;
    let layout = Layout::create(out_dir)?;
    let seg = load_segmenter(&a.segmenter)?;
    let src = load_splits(c, &a.source, Domain::Source)?;
    let tgt = load_splits(c, &a.target, Domain::Target)?;

    let reference = if settings.contains(&Setting::THistM) {
        let h = build_reference_histogram(&src.train, c.histogram_bins)?;
        fs::write(layout.reports.join("reference_histogram.txt"), h.to_text())?;
        Some(h)
    } else {
        None
    };
    let stl = match (&a.stl, settings.contains(&Setting::TStl)) {
        (Some(p), true) => Some(load_segmenter(p)?),
        (None, true) => {
            info!("fine-tuning on {} labeled target cases", tgt.train.len());
            let (m, _) = fine_tune_stl(&seg.unfrozen(), &tgt.train, &tgt.val, &c.stl())
                .map_err(|e| anyhow!("setting T-STL failed: {e}"))?;
            m.to_checkpoint()?.save(&layout.checkpoints.join("stl.ckpt"))?;
            Some(m)
        }
        _ => None,
    };
    let load_opt = |p: &Option<PathBuf>, s: Setting| -> Result<Option<AdaptationState<f32>>> {
        match p {
            Some(p) if settings.contains(&s) => Ok(Some(load_state(p).with_context(|| format!("setting {s}"))?)),
            _ => Ok(None),
        }
    };
    let seuda = load_opt(&a.uda, Setting::SeUda)?;
    let cyuda = load_opt(&a.cyuda, Setting::CyUda)?;
    let inputs = SettingInputs {
        segmenter: Some(&seg),
        source_test: Some(&src.test),
        target_test: Some(&tgt.test),
        reference: reference.as_ref(),
        stl_model: stl.as_ref(),
        cyuda: cyuda.as_ref(),
        seuda: seuda.as_ref(),
    };
    let mut reports = Vec::new();
    for s in settings {
        let r = run_setting(s, &inputs).map_err(|e| anyhow!("setting {s} failed: {e}"))?;
        info!("{s}: mean Dice {:.2}", r.mean_dice());
        write_report(&layout, c, &r)?;
        reports.push(r);
    }
    let mut table = MetricsReport::table(&reports);
    table.push_str("\nT-FeatDA: not implemented (external feature-alignment method).\n");
    let path = layout.reports.join("bench.md");
    fs::write(&path, &table)?;
    print!("{table}");
    println!("table written to {}", path.display());
    Ok(())
}

pub fn stability(
    c: &RunConfig,
    seeds: &[u64],
    lambdas: &[f64],
    source: &Path,
    target: &Path,
    segmenter: &Path,
    out_dir: &Path,
) -> Result<()> {
    let layout = Layout::create(out_dir)?;
    let seg = load_segmenter(segmenter)?;
    let src = load_splits(c, source, Domain::Source)?;
    let tgt = load_splits(c, target, Domain::Target)?;
    let target_train = tgt.train.without_labels();
    let data = StudyData {
        segmenter: &seg,
        source_train: &src.train,
        target_train: &target_train,
        target_test: &tgt.test,
    };
    let report = run_stability(&c.adaptation(), lambdas, seeds, c.uda_epochs, data)?;
    let body = json!({ "config": c, "seeds": seeds, "report": report });
    fs::write(layout.reports.join("stability.json"), serde_json::to_string_pretty(&body)?)?;
    let table = report.table();
    fs::write(layout.reports.join("stability.md"), &table)?;
    print!("{table}");
    Ok(())
}
