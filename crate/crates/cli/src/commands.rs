use std::collections::HashMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use adbn_core::dataset::{
    load_bbox_csv, load_dataset, load_image, synth_generate, write_dataset, write_pgm, write_ppm,
    ClassTable, SynthConfig,
};
use adbn_core::dbn::{argmax, finetune, load, pretrain, save};
use adbn_core::detection::{detect as run_detect, evaluate_detection, BoundingBox, DetectConfig};
use adbn_core::heatmap::{heatmap as relevance_map, render_jet};
use adbn_core::metrics::{
    accuracy_text, auc, detection_report_csv, detection_report_text, one_vs_rest_roc,
    per_class_accuracy, AccuracyTable,
};
use adbn_core::{AdaptiveDbn, GrowthTrace, Rng};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::CliError;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = OsString::from(prefix.as_os_str());
    s.push(suffix);
    PathBuf::from(s)
}

fn model_classes(model: &AdaptiveDbn) -> Result<ClassTable, CliError> {
    Ok(ClassTable::cxr8_prefix(model.n_classes())?)
}

/// Predicted class per image and the accuracy table; shared by `train` and
/// `eval` so both report the same numbers.
fn score_dataset(
    model: &AdaptiveDbn,
    inputs: &[&[f64]],
    labels: &[usize],
) -> Result<(Vec<Vec<f64>>, AccuracyTable), CliError> {
    let probs = model.predict_proba_batch(inputs)?;
    let preds: Vec<usize> = probs.iter().map(|p| argmax(p).0).collect();
    let table = per_class_accuracy(&preds, labels, model.n_classes())?;
    Ok((probs, table))
}

pub fn train(config: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let data_dir = cfg.data_dir.as_ref().ok_or_else(|| CliError::ConfigValue {
        path: config.to_path_buf(),
        message: "data_dir is not set".into(),
    })?;
    let classes = cfg.classes()?;
    let (images, _) = load_dataset(data_dir, &classes)?;
    let first = images
        .first()
        .ok_or_else(|| CliError::Usage(format!("{} holds no images", data_dir.display())))?;
    let shape = (first.image.width, first.image.height);
    let inputs: Vec<&[f64]> = images.iter().map(|i| i.image.pixels.as_slice()).collect();
    let labels: Vec<usize> = images.iter().map(|i| i.class_id).collect();

    let mut trace = GrowthTrace::default();
    let mut model = pretrain(&inputs, shape, classes.len(), &cfg.train, &mut trace)?;
    let report = finetune(&mut model, &inputs, &labels, &cfg.train)?;
    let (_, table) = score_dataset(&model, &inputs, &labels)?;

    if let Some(parent) = cfg.model.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    save(&model, &cfg.model)?;
    create_dir(&cfg.output_dir)?;
    trace.save_csv(&cfg.output_dir.join("growth_trace.csv"))?;
    let summary = json!({
        "model": cfg.model.display().to_string(),
        "images": images.len(),
        "seed": cfg.train.seed,
        "layers": model.layers().len(),
        "hidden_sizes": model.hidden_sizes(),
        "final_loss": report.epoch_loss.last(),
        "train_accuracy": table.overall(),
    });
    write_file(
        &cfg.output_dir.join("train_summary.json"),
        &format!("{summary:#}\n"),
    )?;

    println!("layers: {}", model.layers().len());
    println!("hidden sizes: {:?}", model.hidden_sizes());
    println!("train accuracy: {:.2}%", 100.0 * table.overall());
    print!("{}", accuracy_text(&table, classes.names()));
    Ok(())
}

pub fn eval(model_path: &Path, data: &Path, out: &Path) -> Result<(), CliError> {
    let model = load(model_path)?;
    let classes = model_classes(&model)?;
    let (images, _) = load_dataset(data, &classes)?;
    let inputs: Vec<&[f64]> = images.iter().map(|i| i.image.pixels.as_slice()).collect();
    let labels: Vec<usize> = images.iter().map(|i| i.class_id).collect();
    let (probs, table) = score_dataset(&model, &inputs, &labels)?;

    let mut acc = String::from("class,accuracy_percent,correct,total\n");
    for (k, name) in classes.names().iter().enumerate() {
        let pct = table
            .class_accuracy(k)
            .map_or_else(String::new, |a| format!("{:.2}", 100.0 * a));
        let _ = writeln!(acc, "{name},{pct},{},{}", table.correct[k], table.total[k]);
    }
    let n: usize = table.total.iter().sum();
    let _ = writeln!(
        acc,
        "Total,{:.2},{},{n}",
        100.0 * table.overall(),
        table.correct.iter().sum::<usize>()
    );

    let curves = one_vs_rest_roc(&probs, &labels, model.n_classes())?;
    let mut roc = String::from("class,threshold,fpr,tpr\n");
    let mut aucs = String::from("class,auc\n");
    let mut auc_values = serde_json::Map::new();
    for (name, curve) in classes.names().iter().zip(&curves) {
        let Some(points) = curve else { continue };
        for p in points {
            let _ = writeln!(roc, "{name},{},{},{}", p.threshold, p.fpr, p.tpr);
        }
        let a = auc(points);
        let _ = writeln!(aucs, "{name},{a}");
        auc_values.insert(name.clone(), json!(a));
    }
    let summary = json!({
        "model": model_path.display().to_string(),
        "images": images.len(),
        "accuracy": table.overall(),
        "auc": auc_values,
    });

    create_dir(out)?;
    write_file(&out.join("accuracy.csv"), &acc)?;
    write_file(&out.join("roc.csv"), &roc)?;
    write_file(&out.join("auc.csv"), &aucs)?;
    write_file(&out.join("eval_summary.json"), &format!("{summary:#}\n"))?;

    print!("{}", accuracy_text(&table, classes.names()));
    println!();
    for (name, curve) in classes.names().iter().zip(&curves) {
        match curve {
            Some(points) => println!("AUC {name}: {:.4}", auc(points)),
            None => println!("AUC {name}: n/a"),
        }
    }
    Ok(())
}

pub struct DetectRequest {
    pub model: PathBuf,
    pub input: PathBuf,
    pub config: Option<PathBuf>,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub regions: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub bbox: Option<PathBuf>,
    pub iou: f64,
    pub report: Option<PathBuf>,
}

fn list_images(input: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !input.is_dir() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut paths = Vec::new();
    for entry in fs::read_dir(input).map_err(io_err(input))? {
        let path = entry.map_err(io_err(input))?.path();
        if path.extension().is_some_and(|e| e == "pgm") {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

fn box_line(image: &str, b: &BoundingBox, classes: &ClassTable) -> String {
    json!({
        "image": image,
        "class": classes.name(b.class_id),
        "x": b.x,
        "y": b.y,
        "w": b.w,
        "h": b.h,
        "score": b.score,
    })
    .to_string()
}

/// Images are processed in file-name order with one random stream, so a run
/// is reproducible for a fixed input set and seed.
pub fn detect(req: &DetectRequest) -> Result<(), CliError> {
    let model = load(&req.model)?;
    let classes = model_classes(&model)?;
    let (mut dcfg, cfg_seed) = match &req.config {
        Some(path) => {
            let cfg = RunConfig::load(path)?;
            (cfg.detect, cfg.train.seed)
        }
        None => (DetectConfig::default(), 42),
    };
    if let Some(t1) = req.t1 {
        dcfg.t1 = t1;
    }
    if let Some(t2) = req.t2 {
        dcfg.t2 = t2;
    }
    if let Some(n) = req.regions {
        dcfg.regions = n;
    }
    dcfg.validate()?;
    let seed = req.seed.unwrap_or(cfg_seed);
    let paths = list_images(&req.input)?;
    eprintln!(
        "# detect: images={} regions={} t1={} t2={} seed={} merge={}",
        paths.len(),
        dcfg.regions,
        dcfg.t1,
        dcfg.t2,
        seed,
        dcfg.merge
    );

    let mut rng = Rng::new(seed);
    let mut found: HashMap<String, Vec<BoundingBox>> = HashMap::new();
    let mut lines = String::new();
    for path in &paths {
        let image = load_image(path)?;
        let name = path.file_name().map_or_else(
            || path.display().to_string(),
            |f| f.to_string_lossy().into_owned(),
        );
        let boxes = run_detect(
            &model,
            &image.pixels,
            image.width,
            image.height,
            &dcfg,
            &mut rng,
        )?;
        for b in &boxes {
            lines.push_str(&box_line(&name, b, &classes));
            lines.push('\n');
        }
        found.insert(name, boxes);
    }
    match &req.out {
        Some(path) => write_file(path, &lines)?,
        None => {
            let stdout = std::io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            w.write_all(lines.as_bytes())
                .and_then(|_| w.flush())
                .map_err(io_err(Path::new("<stdout>")))?;
        }
    }

    if let Some(bbox) = &req.bbox {
        let truth: Vec<_> = load_bbox_csv(bbox, &classes)?
            .into_iter()
            .filter(|g| found.contains_key(&g.image))
            .collect();
        let eval = evaluate_detection(&found, &truth, req.iou, model.n_classes())?;
        let text = detection_report_text(&eval, classes.names(), dcfg.background);
        if req.out.is_some() {
            print!("{text}");
        } else {
            eprint!("{text}");
        }
        if let Some(report) = &req.report {
            write_file(
                report,
                &detection_report_csv(&eval, classes.names(), dcfg.background),
            )?;
        }
    } else if req.report.is_some() {
        return Err(CliError::Usage("--report needs --bbox".into()));
    }
    Ok(())
}

pub fn heatmap(
    model_path: &Path,
    image_path: &Path,
    class: &str,
    out: &Path,
    discrete: bool,
) -> Result<(), CliError> {
    let model = load(model_path)?;
    let classes = model_classes(&model)?;
    let class_id = classes.id(class).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown class {class:?}; valid classes: {}",
            classes.names().join(", ")
        ))
    })?;
    let image = load_image(image_path)?;
    if (image.width, image.height) != model.input_shape() {
        let (w, h) = model.input_shape();
        return Err(CliError::Usage(format!(
            "{} is {}x{} but the model expects {w}x{h}",
            image_path.display(),
            image.width,
            image.height
        )));
    }
    let map = relevance_map(&model, &image.pixels, class_id, discrete)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let pgm = with_suffix(out, ".pgm");
    let ppm = with_suffix(out, ".ppm");
    write_pgm(&pgm, map.width, map.height, &map.values)?;
    write_ppm(&ppm, map.width, map.height, &render_jet(&map))?;
    println!("{}", pgm.display());
    println!("{}", ppm.display());
    Ok(())
}

pub fn synth(
    out: &Path,
    train: usize,
    test: usize,
    seed: u64,
    n_classes: usize,
    size: usize,
) -> Result<(), CliError> {
    if train == 0 {
        return Err(CliError::Usage("--train must be >= 1".into()));
    }
    let cfg = SynthConfig {
        size,
        n_classes,
        ..SynthConfig::default()
    };
    let classes = ClassTable::cxr8_prefix(n_classes)?;
    let (images, boxes) = synth_generate(train + test, &cfg, &mut Rng::new(seed))?;
    let parts = [("train", &images[..train]), ("test", &images[train..])];
    for (part, imgs) in parts {
        if imgs.is_empty() {
            continue;
        }
        let names: std::collections::HashSet<&str> = imgs.iter().map(|i| i.name.as_str()).collect();
        let part_boxes: Vec<_> = boxes
            .iter()
            .filter(|b| names.contains(b.image.as_str()))
            .cloned()
            .collect();
        write_dataset(out.join(part), imgs, &part_boxes, &classes)?;
        println!(
            "{}: {} images, {} boxes",
            out.join(part).display(),
            imgs.len(),
            part_boxes.len()
        );
    }
    Ok(())
}
