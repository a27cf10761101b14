//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use camscope::backbones::{build, load_checkpoint, save_checkpoint, CheckpointMeta, ClassifierModel};
use camscope::cam::{self, CamMethod};
use camscope::dataset::{
    generate_synthetic, load_image, stratified_split, DatasetSplit, DirectorySource, ImageRef, ImageSource,
    LabeledImage, SplitPart, SyntheticSpec,
};
use camscope::image::Image;
use camscope::metrics::{confusion, report, Averaging};
use camscope::preprocess::{prepare_eval, PreprocessConfig};
use camscope::reporting::{
    comparison_table, confusion_image, explanation_panel, image_id, image_to_rgb, performance_chart, png_bytes,
    write_bytes, write_explanation, write_json, HeatmapSidecar, RunArtifact, RunLayout, RunMetrics, NORMALIZATION,
};
use camscope::training::{evaluate as evaluate_model, train_with_observer, TrainLog};
use camscope::{pretrain as pretraining, rng};
use log::{info, warn};
use rand::seq::SliceRandom;

use crate::config::{parse_methods, RunConfig, TargetPolicy};
use crate::error::CliError;
use crate::{CompareArgs, EvaluateArgs, ExplainArgs, PretrainArgs, SynthArgs, TrainArgs};

/// Scalar type of every CLI computation.
type S = f32;

pub struct Globals {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Globals {
    fn load_config(&self, fallback: Option<&Path>) -> Result<RunConfig, CliError> {
        let path = self
            .config
            .as_deref()
            .or(fallback)
            .ok_or_else(|| CliError::Usage("--config is required".into()))?;
        let mut cfg = RunConfig::load(path)?;
        if let Some(seed) = self.seed {
            cfg.override_seed(seed);
        }
        Ok(cfg)
    }

    fn out_root(&self, cfg: Option<&RunConfig>) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.map(|c| c.report.out_dir.clone()))
            .unwrap_or_else(|| PathBuf::from("runs"))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Mismatch(format!("{}: {e}", path.display()))
}

fn open_source(cfg: &RunConfig) -> Result<Box<dyn ImageSource<S>>, CliError> {
    if let Some(s) = &cfg.dataset.synthetic {
        let data = generate_synthetic::<S>(&s.spec())?;
        info!(
            "generated {} synthetic images in {} classes",
            data.len(),
            data.registry.len()
        );
        return Ok(Box::new(data.into_source()));
    }
    let root = cfg.dataset.root.as_ref().expect("validated: root or synthetic");
    let source = DirectorySource::open(root)?;
    let report = source.report();
    for s in &report.skipped {
        warn!("skipped {}: {}", s.path.display(), s.reason);
    }
    info!(
        "found {} images in {} classes under {}",
        report.items.len(),
        report.registry.len(),
        root.display()
    );
    Ok(Box::new(source))
}

fn read_split(layout: &RunLayout) -> Result<DatasetSplit, CliError> {
    let path = layout.split();
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Mismatch(format!("{}: {e}", path.display())))
}

fn run_dir_config(g: &Globals, layout: &RunLayout) -> Result<RunConfig, CliError> {
    if !layout.root.is_dir() {
        return Err(CliError::Mismatch(format!(
            "run directory {} does not exist",
            layout.root.display()
        )));
    }
    g.load_config(Some(&layout.config()))
}

fn load_model(path: &Path) -> Result<(ClassifierModel<S>, CheckpointMeta), CliError> {
    if !path.is_file() {
        return Err(CliError::Mismatch(format!(
            "checkpoint {} does not exist",
            path.display()
        )));
    }
    Ok(load_checkpoint::<S>(path)?)
}

pub fn train(g: &Globals, args: &TrainArgs) -> Result<(), CliError> {
    let cfg = g.load_config(None)?;
    cfg.check_pretrained()?;
    let spec = cfg.model.spec();
    let run_id = args
        .run_id
        .clone()
        .unwrap_or_else(|| format!("{}-s{}", spec.architecture, cfg.train.seed));
    let layout = RunLayout::new(g.out_root(Some(&cfg)).join(&run_id));
    fs::create_dir_all(&layout.root).map_err(io_err(&layout.root))?;
    info!("run directory {}", layout.root.display());

    let source = open_source(&cfg)?;
    let split = stratified_split(
        &source.items(),
        source.registry(),
        cfg.dataset.fractions,
        cfg.dataset.seed,
    )?;
    info!(
        "split: {} train, {} val, {} test",
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    write_json(&layout.config(), &cfg)?;
    write_json(&layout.split(), &split)?;

    let mut model = build::<S>(&spec, split.classes.len(), cfg.model.init_seed)?;
    let log_path = layout.trainlog();
    let mut log_file = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(&log_path)
        .map_err(io_err(&log_path))?;
    let mut write_failure = None;
    let result = train_with_observer(
        &mut model,
        source.as_ref(),
        &split,
        &cfg.preprocess,
        &cfg.train,
        &mut |r| {
            let line = serde_json::to_string(r).expect("record serializes");
            if let Err(e) = writeln!(log_file, "{line}") {
                write_failure.get_or_insert(e);
            }
        },
    );
    if let Some(e) = write_failure {
        return Err(io_err(&log_path)(e));
    }
    let log = result?;
    let meta = CheckpointMeta::new(spec, split.classes.clone(), cfg.preprocess.clone(), log.best_epoch);
    save_checkpoint(&layout.checkpoint(), &model, &meta)?;
    let best = log.best().expect("at least one epoch");
    println!(
        "{}: best epoch {} (val accuracy {:.4}), run {}",
        meta.backbone.architecture,
        log.best_epoch,
        best.val_accuracy,
        layout.root.display()
    );
    Ok(())
}

pub fn evaluate(g: &Globals, args: &EvaluateArgs) -> Result<(), CliError> {
    let layout = RunLayout::new(&args.run);
    let cfg = run_dir_config(g, &layout)?;
    let split = read_split(&layout)?;
    let (model, meta) = load_model(args.checkpoint.as_deref().unwrap_or(&layout.checkpoint()))?;
    if meta.classes != split.classes {
        return Err(CliError::Mismatch(format!(
            "checkpoint classes [{}] differ from the run's split classes [{}]",
            meta.classes.names().join(", "),
            split.classes.names().join(", ")
        )));
    }
    let source = open_source(&cfg)?;
    let ev = evaluate_model(
        &model,
        &meta.classes,
        source.as_ref(),
        &split.test,
        &meta.preprocess,
        cfg.train.batch_size,
    )?;
    let cm = confusion(&ev.labels, &ev.predictions, &meta.classes).map_err(|e| CliError::Mismatch(e.to_string()))?;
    let rep = report(&cm, Averaging::default()).map_err(|e| CliError::Mismatch(e.to_string()))?;
    let metrics = RunMetrics {
        model: meta.backbone.architecture.to_string(),
        split: "test".into(),
        n_items: ev.ids.len(),
        report: rep,
    };
    write_json(&layout.metrics(), &metrics)?;
    write_bytes(&layout.confusion_csv(), cm.to_csv().as_bytes())?;
    write_bytes(&layout.confusion_png(), &png_bytes(&confusion_image(&cm))?)?;
    let r = &metrics.report;
    println!("Model,Accuracy,Precision,Recall,F1-Score,Jaccard Score");
    println!(
        "{},{:.4},{:.4},{:.4},{:.4},{:.4}",
        metrics.model, r.accuracy, r.precision, r.recall, r.f1, r.jaccard
    );
    Ok(())
}

/// Up to `n` ids per class from `ids`, in a seed-determined order.
fn select_per_class(source: &dyn ImageSource<S>, ids: &[String], n: usize, seed: u64) -> Vec<(String, usize)> {
    let labels: BTreeMap<String, usize> = source.items().into_iter().collect();
    let names = source.registry().names();
    let mut out = Vec::new();
    for (c, name) in names.iter().enumerate() {
        let mut pool: Vec<&String> = ids.iter().filter(|id| labels.get(*id) == Some(&c)).collect();
        pool.sort();
        pool.shuffle(&mut rng::stream(seed, &["explain", name]));
        out.extend(pool.into_iter().take(n).map(|id| (id.clone(), c)));
    }
    out
}

fn parse_part(s: &str) -> Result<SplitPart, CliError> {
    match s {
        "train" => Ok(SplitPart::Train),
        "val" => Ok(SplitPart::Val),
        "test" => Ok(SplitPart::Test),
        _ => Err(CliError::Usage(format!(
            "--split must be train, val or test, got `{s}`"
        ))),
    }
}

/// Preprocessed model input plus a `[0, 1]` copy for display.
fn prepare(img: &LabeledImage<S>, pp: &PreprocessConfig, side: usize) -> Result<(Image<S>, Image<S>), CliError> {
    let input = prepare_eval(img, pp, side)
        .map_err(|e| CliError::Mismatch(e.to_string()))?
        .pixels;
    let display = if pp.normalize {
        input.clone()
    } else {
        input.map(|v| v / 255.0)
    };
    Ok((input, display))
}

pub fn explain(g: &Globals, args: &ExplainArgs) -> Result<(), CliError> {
    if let Some(m) = &args.methods {
        parse_methods(m)?;
    }
    let policy = match args.target.as_deref() {
        None => None,
        Some("predicted") => Some(TargetPolicy::Predicted),
        Some("true") => Some(TargetPolicy::True),
        Some(t) => {
            return Err(CliError::Usage(format!(
                "--target must be `predicted` or `true`, got `{t}`"
            )))
        }
    };
    let part = parse_part(&args.split)?;
    let layout = RunLayout::new(&args.run);
    let cfg = run_dir_config(g, &layout)?;
    let methods = parse_methods(args.methods.as_ref().unwrap_or(&cfg.explain.methods))?;
    let policy = policy.unwrap_or(cfg.explain.target);
    let per_class = args.images_per_class.unwrap_or(cfg.explain.images_per_class);
    let (model, meta) = load_model(args.checkpoint.as_deref().unwrap_or(&layout.checkpoint()))?;
    let layer = args
        .tap_layer
        .clone()
        .or_else(|| cfg.explain.tap_layer.clone())
        .unwrap_or_else(|| model.last_conv_layer().to_string());
    let side = model.input_side();

    let images: Vec<(LabeledImage<S>, Option<usize>)> = match &args.image {
        Some(path) => {
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().to_string())
                .unwrap_or_default();
            let r = ImageRef {
                source_id: name,
                path: path.clone(),
                label: 0,
            };
            vec![(load_image::<S>(&r)?, None)]
        }
        None => {
            let split = read_split(&layout)?;
            let source = open_source(&cfg)?;
            if source.registry() != &meta.classes {
                return Err(CliError::Mismatch(format!(
                    "dataset classes [{}] differ from checkpoint classes [{}]",
                    source.registry().names().join(", "),
                    meta.classes.names().join(", ")
                )));
            }
            select_per_class(source.as_ref(), split.part(part), per_class, cfg.dataset.seed)
                .into_iter()
                .map(|(id, c)| Ok((source.load(&id)?, Some(c))))
                .collect::<Result<_, CliError>>()?
        }
    };

    let mut panels = 0;
    for (img, true_class) in &images {
        let (input, display) = prepare(img, &meta.preprocess, side)?;
        let target = policy.resolve(*true_class);
        let maps = cam::explain(&model, &input, &layer, target, &methods, cfg.explain.score_batch)?;
        let mut overlays = Vec::with_capacity(maps.len());
        for raw in &maps {
            let map = cam::postprocess(raw, side);
            let over = cam::overlay(&display, &map, cfg.explain.alpha)?;
            let sidecar = HeatmapSidecar {
                source_id: img.source_id.clone(),
                method: map.method,
                method_label: map.method.label().to_string(),
                tap_layer: layer.clone(),
                target_class: map.target_class,
                target_name: meta.classes.name(map.target_class).map(str::to_string),
                true_class: *true_class,
                side,
                normalization: NORMALIZATION.to_string(),
                overlay_alpha: cfg.explain.alpha,
                colormap: "viridis".into(),
            };
            write_explanation(&layout, &sidecar, &map, &over)?;
            overlays.push((map.method, image_to_rgb(&over)));
        }
        let id = image_id(&img.source_id);
        if CamMethod::ALL.iter().all(|m| methods.contains(m)) {
            let panel = explanation_panel(&overlays)?;
            write_bytes(&layout.panel(&id), &png_bytes(&panel)?)?;
            panels += 1;
        }
        info!("explained {} ({} methods)", img.source_id, maps.len());
    }
    if panels == 0 && !images.is_empty() {
        info!("panels skipped: they need all four methods");
    }
    println!(
        "wrote {} explanation(s) for {} image(s) and {panels} panel(s) under {}",
        images.len() * methods.len(),
        images.len(),
        layout.explanations().display()
    );
    Ok(())
}

pub fn compare(g: &Globals, args: &CompareArgs) -> Result<(), CliError> {
    if args.runs.is_empty() {
        return Err(CliError::Usage("compare needs at least one run directory".into()));
    }
    let artifacts = args
        .runs
        .iter()
        .map(|d| RunArtifact::load(d))
        .collect::<Result<Vec<_>, _>>()?;
    let table = comparison_table(&artifacts)?;
    let layout = RunLayout::new(g.out_root(None).join("comparison"));
    write_bytes(&layout.comparison_csv(), table.to_csv().as_bytes())?;
    let text = table.to_text();
    write_bytes(&layout.comparison_txt(), text.as_bytes())?;
    print!("{text}");
    if artifacts.len() < 2 {
        eprintln!("notice: chart skipped, it needs at least two runs");
    } else {
        let chart = performance_chart(&table)?;
        write_bytes(&layout.chart(), &png_bytes(&chart.image)?)?;
    }
    info!("comparison written to {}", layout.root.display());
    Ok(())
}

pub fn synth(g: &Globals, args: &SynthArgs) -> Result<(), CliError> {
    let spec = SyntheticSpec {
        classes: args.classes,
        per_class: args.per_class,
        side: args.side,
        noise_sigma: args.noise_sigma,
        seed: g.seed.unwrap_or(0),
    };
    let data = generate_synthetic::<S>(&spec)?;
    data.write_to(&args.dest)?;
    println!(
        "wrote {} images in {} classes to {}",
        data.len(),
        data.registry.len(),
        args.dest.display()
    );
    Ok(())
}

pub fn pretrain(g: &Globals, args: &PretrainArgs) -> Result<(), CliError> {
    let cfg = g.load_config(None)?;
    let spec = cfg.model.spec();
    let mut pcfg = cfg.pretrain.clone();
    if let Some(seed) = g.seed {
        pcfg.seed = seed;
    }
    let dest = args.dest.clone().unwrap_or_else(|| {
        g.out_root(Some(&cfg))
            .join(format!("pretrained-{}-{}", spec.architecture, spec.input_side))
    });
    let layout = RunLayout::new(&dest);
    fs::create_dir_all(&dest).map_err(io_err(&dest))?;
    let done = pretraining::pretrain::<S>(&spec, &pcfg, &mut |r| {
        info!("pretrain epoch {}: val accuracy {:.4}", r.epoch, r.val_accuracy)
    })?;
    let mut records = done.log.records.clone();
    records.extend(done.anneal_log.iter().flat_map(|l| l.records.clone()));
    write_bytes(
        &layout.trainlog(),
        TrainLog::from_records(records).to_jsonl().as_bytes(),
    )?;
    done.save(&layout.checkpoint())?;
    println!("pretrained weights written to {}", layout.checkpoint().display());
    Ok(())
}
