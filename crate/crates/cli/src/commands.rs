use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, Utc};
use lesion_triage_core::augment::{balance_classes, extract_pattern, BaseImage, LesionPattern};
use lesion_triage_core::eval::{
    read_prediction_log, render_report, write_prediction_log, ReportFormat, ScoreMode,
};
use lesion_triage_core::manifest::{class_distribution, load_manifest, save_manifest_atomic};
use lesion_triage_core::split::{stratified_split, SplitOptions};
use lesion_triage_core::synth::lesion_scene;
use lesion_triage_core::{BinaryMask, Dataset, DiseaseClass, ImageRecord, Label, Source, SplitTag};
use lesion_triage_service::analytics::summarize;
use lesion_triage_service::{ScanResult, ServiceConfig, Store};
use lesion_triage_vision::classifier::{labeled_images, write_epoch_log};
use lesion_triage_vision::error::load_rgb;
use lesion_triage_vision::evaluate::{score_entries, Evaluation};
use lesion_triage_vision::{
    evaluate, heatmap_overlay, refine_and_classify, train_classifier, train_segmenter, ClsModel, SegModel,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::error::CliError;
use crate::settings::Settings;
use crate::{Cli, Command, ModeArg};

pub fn dispatch(cli: &Cli, settings: &Settings) -> Result<(), CliError> {
    let summary = match &cli.command {
        Command::Ingest {
            source_dir,
            synthetic,
            source,
        } => match (source_dir, synthetic) {
            (Some(dir), None) => ingest_dir(&cli.manifest(), dir, (*source).into())?,
            (None, Some(n)) => ingest_synthetic(&cli.manifest(), *n, settings)?,
            _ => return Err(CliError::Usage("give exactly one of --source-dir or --synthetic".into())),
        },
        Command::Augment { target, output } => augment(cli, settings, *target, output.as_deref())?,
        Command::Split {
            fraction,
            exclude_augmented,
        } => split(
            &cli.manifest(),
            fraction.unwrap_or(settings.split.fraction),
            settings.seed,
            *exclude_augmented || settings.split.exclude_augmented,
        )?,
        Command::TrainSeg => train_seg(cli, settings)?,
        Command::TrainCls { review_store } => train_cls(cli, settings, review_store.as_deref())?,
        Command::Eval { mode } => eval(cli, settings, *mode)?,
        Command::Report {
            predictions,
            mode,
            store,
            from,
            to,
        } => report(cli, settings, predictions.as_deref(), *mode, store.as_deref(), from.as_deref(), to.as_deref())?,
        Command::Infer { image, overlay } => infer(cli, settings, image, overlay.as_deref())?,
        Command::Serve { addr, store } => return serve(cli, *addr, store.clone()),
    };
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn manifest_root(manifest: &Path) -> PathBuf {
    match manifest.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p)?;
    }
    Ok(())
}

fn save_png(image: &image::RgbImage, path: &Path) -> Result<(), CliError> {
    ensure_parent(path)?;
    image.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

fn save_mask(mask: &BinaryMask, path: &Path) -> Result<(), CliError> {
    ensure_parent(path)?;
    mask.save_png(path)?;
    Ok(())
}

fn distribution_json(dataset: &Dataset) -> serde_json::Value {
    let dist = class_distribution(dataset);
    serde_json::Value::Object(dist.iter().map(|(c, n)| (c.token().to_string(), json!(n))).collect())
}

fn ingest_synthetic(manifest: &Path, n: usize, settings: &Settings) -> Result<serde_json::Value, CliError> {
    if n == 0 {
        return Err(CliError::Usage("--synthetic needs at least one image".into()));
    }
    let root = manifest_root(manifest);
    let size = settings.synthetic.size;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let class = DiseaseClass::ALL[i % DiseaseClass::ALL.len()];
        let scene = lesion_scene(class, size, settings.synthetic.distractors, &mut rng);
        let id = format!("syn-{i:05}");
        let mut r = ImageRecord::new(&id, format!("synthetic/{id}.png"), Label::Class(class), Source::Clinician, size, size);
        save_png(&scene.image, &root.join(&r.path))?;
        let mask_path = format!("synthetic/{id}.mask.png");
        save_mask(&scene.subject_mask, &root.join(&mask_path))?;
        r.mask_path = Some(mask_path);
        if class.is_disease() {
            let lesion_path = format!("synthetic/{id}.lesion.png");
            save_mask(&scene.lesion_mask, &root.join(&lesion_path))?;
            r.lesion_mask_path = Some(lesion_path);
        }
        records.push(r);
    }
    let dataset = Dataset::new(records);
    ensure_parent(manifest)?;
    save_manifest_atomic(&dataset, manifest)?;
    Ok(json!({ "manifest": manifest, "records": dataset.len(), "classes": distribution_json(&dataset) }))
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

fn ingest_dir(manifest: &Path, source_dir: &Path, source: Source) -> Result<serde_json::Value, CliError> {
    if !source_dir.is_dir() {
        return Err(CliError::Data(format!("{} is not a directory", source_dir.display())));
    }
    let root = manifest_root(manifest);
    let root_abs = fs::canonicalize(&root).ok();
    // Paths under the manifest's directory stay relative; others are stored absolute.
    let record_path = |p: &Path| -> String {
        let abs = fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
        match root_abs.as_ref().and_then(|r| abs.strip_prefix(r).ok()) {
            Some(rel) => rel.to_string_lossy().replace('\\', "/"),
            None => abs.to_string_lossy().into_owned(),
        }
    };
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut class_dirs: Vec<_> = fs::read_dir(source_dir)?.collect::<Result<_, _>>()?;
    class_dirs.sort_by_key(|e| e.file_name());
    for entry in class_dirs {
        if !entry.file_type()?.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let Ok(label) = name.parse::<Label>() else {
            skipped.push(name);
            continue;
        };
        let mut files: Vec<_> = fs::read_dir(entry.path())?.collect::<Result<_, _>>()?;
        files.sort_by_key(|e| e.file_name());
        for f in files {
            let path = f.path();
            let file_name = f.file_name().to_string_lossy().into_owned();
            let ext = path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase()).unwrap_or_default();
            if !IMAGE_EXTENSIONS.contains(&ext.as_str()) || file_name.contains(".mask.") || file_name.contains(".lesion.") {
                continue;
            }
            let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let (w, h) = image::image_dimensions(&path)
                .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            let mut r = ImageRecord::new(format!("{name}-{stem}"), record_path(&path), label, source, w, h);
            let sibling = |kind: &str| path.with_file_name(format!("{stem}.{kind}.png"));
            if sibling("mask").is_file() {
                r.mask_path = Some(record_path(&sibling("mask")));
            }
            if sibling("lesion").is_file() {
                r.lesion_mask_path = Some(record_path(&sibling("lesion")));
            }
            records.push(r);
        }
    }
    let dataset = Dataset::new(records);
    dataset.check_unique_ids()?;
    ensure_parent(manifest)?;
    save_manifest_atomic(&dataset, manifest)?;
    Ok(json!({
        "manifest": manifest,
        "records": dataset.len(),
        "classes": distribution_json(&dataset),
        "skipped_folders": skipped,
    }))
}

fn load_mask(dataset: &Dataset, rel: &str) -> Result<BinaryMask, CliError> {
    let path = dataset.resolve(rel);
    BinaryMask::load(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_image(dataset: &Dataset, r: &ImageRecord) -> Result<image::RgbImage, CliError> {
    Ok(load_rgb(dataset.resolve(&r.path)).map_err(|e| e.for_image(&r.id))?)
}

fn augment(
    cli: &Cli,
    settings: &Settings,
    target: Option<usize>,
    output: Option<&Path>,
) -> Result<serde_json::Value, CliError> {
    let manifest = cli.manifest();
    let dataset = load_manifest(&manifest)?;
    let mut patterns: Vec<LesionPattern> = Vec::new();
    let mut bases = Vec::new();
    for r in &dataset.records {
        match (r.class(), &r.lesion_mask_path, &r.mask_path) {
            (Some(c), Some(lesion), _) if c.is_disease() && r.is_training_eligible() => {
                let image = load_image(&dataset, r)?;
                patterns.push(extract_pattern(&image, &load_mask(&dataset, lesion)?, c, r.id.clone())?);
            }
            (Some(DiseaseClass::NonDiseased), _, Some(mask)) if r.is_training_eligible() => bases.push(BaseImage {
                record: r.clone(),
                image: load_image(&dataset, r)?,
                subject_mask: load_mask(&dataset, mask)?,
            }),
            _ => {}
        }
    }
    let dist = class_distribution(&dataset);
    let largest = DiseaseClass::DISEASES.iter().map(|c| dist[c]).max().unwrap_or(0);
    let target = target.or(settings.augment.target).unwrap_or(largest);
    let balanced = balance_classes(&dataset, &bases, &patterns, target, settings.seed)?;

    let root = manifest_root(&manifest);
    for g in &balanced.generated {
        save_png(&g.image, &root.join(&g.record.path))?;
    }
    let out_dir = cli.out_dir();
    let mut recipes = Vec::new();
    for g in &balanced.generated {
        let line = json!({ "record_id": g.record.id, "base_id": g.record.base_id, "recipe": g.recipe });
        writeln!(recipes, "{line}")?;
    }
    fs::write(out_dir.join("recipes.jsonl"), recipes)?;

    let output = output.map(Path::to_path_buf).unwrap_or_else(|| {
        let stem = manifest.file_stem().unwrap_or_default().to_string_lossy();
        manifest.with_file_name(format!("{stem}.augmented.jsonl"))
    });
    if output == manifest {
        return Err(CliError::Usage("augment does not overwrite its input manifest".into()));
    }
    let mut result = balanced.dataset;
    let out_root = manifest_root(&output);
    if fs::canonicalize(&out_root).ok() != fs::canonicalize(&root).ok() {
        // Keep relative paths valid from the output's directory.
        let abs = fs::canonicalize(&root)?;
        for r in &mut result.records {
            for p in [Some(&mut r.path), r.mask_path.as_mut(), r.lesion_mask_path.as_mut()].into_iter().flatten() {
                if Path::new(p.as_str()).is_relative() {
                    *p = abs.join(&*p).to_string_lossy().into_owned();
                }
            }
        }
    }
    ensure_parent(&output)?;
    save_manifest_atomic(&result, &output)?;
    Ok(json!({
        "manifest": output,
        "generated": balanced.generated.len(),
        "target": target,
        "patterns": patterns.len(),
        "bases": bases.len(),
        "classes": distribution_json(&result),
    }))
}

/// Tags eligible records train or val and everything else unassigned, then
/// rewrites the manifest atomically.
pub fn split(manifest: &Path, fraction: f64, seed: u64, exclude_augmented: bool) -> Result<serde_json::Value, CliError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CliError::Usage(format!("--fraction {fraction} outside (0, 1)")));
    }
    let dataset = load_manifest(manifest)?;
    let eligible = dataset.derive(dataset.records.iter().filter(|r| r.is_training_eligible()).cloned().collect());
    let mut options = SplitOptions::new(fraction, seed);
    options.include_augmented_in_validation = !exclude_augmented;
    let parts = stratified_split(&eligible, options)?;
    let tags: HashMap<&str, SplitTag> = parts
        .train
        .records
        .iter()
        .chain(&parts.validation.records)
        .map(|r| (r.id.as_str(), r.split))
        .collect();
    let mut out = dataset.clone();
    for r in &mut out.records {
        r.split = tags.get(r.id.as_str()).copied().unwrap_or(SplitTag::Unassigned);
    }
    save_manifest_atomic(&out, manifest)?;
    Ok(json!({
        "manifest": manifest,
        "train": parts.train.len(),
        "validation": parts.validation.len(),
        "unassigned": dataset.len() - eligible.len(),
    }))
}

/// Records tagged train, or every record not tagged validation when the
/// manifest has not been split.
fn training_records(dataset: &Dataset) -> Vec<&ImageRecord> {
    let tagged = dataset.records.iter().any(|r| r.split == SplitTag::Train);
    dataset
        .records
        .iter()
        .filter(|r| if tagged { r.split == SplitTag::Train } else { r.split != SplitTag::Validation })
        .collect()
}

fn train_seg(cli: &Cli, settings: &Settings) -> Result<serde_json::Value, CliError> {
    let dataset = load_manifest(cli.manifest())?;
    let mut pairs = Vec::new();
    for r in training_records(&dataset) {
        if let Some(mask) = &r.mask_path {
            pairs.push((load_image(&dataset, r)?, load_mask(&dataset, mask)?));
        }
    }
    let model = train_segmenter(&pairs, &settings.segmenter)?;
    let model_dir = cli.model_dir();
    fs::create_dir_all(&model_dir)?;
    model.save(&model_dir)?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in model.epoch_losses().iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", i + 1));
    }
    fs::write(cli.out_dir().join("segmenter_losses.csv"), csv)?;
    Ok(json!({
        "model_dir": model_dir,
        "pairs": pairs.len(),
        "final_loss": model.epoch_losses().last(),
        "training_hash": model.training_hash(),
    }))
}

fn train_cls(cli: &Cli, settings: &Settings, review_store: Option<&Path>) -> Result<serde_json::Value, CliError> {
    let mut dataset = load_manifest(cli.manifest())?;
    if let Some(path) = review_store {
        if !path.is_file() {
            return Err(CliError::Data(format!("review store {} does not exist", path.display())));
        }
        dataset = Store::open(path)?.apply_verdicts(&dataset)?;
    }
    let candidates = training_records(&dataset);
    let total = candidates.len();
    let selected: Vec<ImageRecord> = candidates.into_iter().filter(|r| r.is_training_eligible()).cloned().collect();
    let skipped = total - selected.len();
    let selected = dataset.derive(selected);
    let samples = labeled_images(&selected)?;
    let model = train_classifier(&samples, &settings.classifier, &settings.transforms)?;
    let model_dir = cli.model_dir();
    fs::create_dir_all(&model_dir)?;
    model.save(&model_dir)?;
    write_epoch_log(cli.out_dir().join("classifier_epochs.csv"), model.epoch_log())?;
    let last = model.epoch_log().last();
    Ok(json!({
        "model_dir": model_dir,
        "samples": samples.len(),
        "skipped_ineligible": skipped,
        "final_epoch": last,
        "dataset_hash": model.dataset_hash(),
    }))
}

fn write_reports(out_dir: &Path, evaluation: &Evaluation, mode: ModeArg) -> Result<serde_json::Value, CliError> {
    let mut summary = serde_json::Map::new();
    for &m in mode.modes() {
        let report = evaluation.report(m);
        for format in [ReportFormat::Markdown, ReportFormat::Json, ReportFormat::Csv] {
            fs::write(out_dir.join(report_file(m, format)), render_report(report, format))?;
        }
        summary.insert(
            m.token().into(),
            json!({ "overall_accuracy": report.overall_accuracy, "notes": report.notes }),
        );
    }
    Ok(summary.into())
}

pub fn report_file(mode: ScoreMode, format: ReportFormat) -> String {
    format!("report_{}.{}", mode.token(), format.extension())
}

pub const PREDICTIONS_FILE: &str = "predictions.csv";

fn eval(cli: &Cli, settings: &Settings, mode: ModeArg) -> Result<serde_json::Value, CliError> {
    let dataset = load_manifest(cli.manifest())?;
    let validation = dataset.derive(
        dataset
            .records
            .iter()
            .filter(|r| r.split == SplitTag::Validation && r.class().is_some())
            .cloned()
            .collect(),
    );
    if validation.is_empty() {
        return Err(CliError::Data("manifest has no labeled validation records; run `split` first".into()));
    }
    let model_dir = cli.model_dir();
    let seg = SegModel::load(&model_dir)?;
    let cls = ClsModel::load(&model_dir)?;
    let evaluation = evaluate(&seg, &cls, &validation, settings.eval.saliency_threshold, settings.eval.ci_level)?;
    let out_dir = cli.out_dir();
    let mut log = Vec::new();
    write_prediction_log(&mut log, &evaluation.entries)?;
    fs::write(out_dir.join(PREDICTIONS_FILE), log)?;
    let reports = write_reports(&out_dir, &evaluation, mode)?;
    Ok(json!({ "images": evaluation.entries.len(), "reports": reports }))
}

fn parse_bound(s: &str, end: bool) -> Result<DateTime<Utc>, CliError> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    let d = NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|_| CliError::Usage(format!("`{s}` is neither RFC 3339 nor YYYY-MM-DD")))?;
    let t = if end {
        d.and_hms_micro_opt(23, 59, 59, 999_999)
    } else {
        d.and_hms_opt(0, 0, 0)
    };
    Ok(t.expect("valid time of day").and_utc())
}

#[allow(clippy::too_many_arguments)]
fn report(
    cli: &Cli,
    settings: &Settings,
    predictions: Option<&Path>,
    mode: ModeArg,
    store: Option<&Path>,
    from: Option<&str>,
    to: Option<&str>,
) -> Result<serde_json::Value, CliError> {
    let out_dir = cli.out_dir();
    let log_path = predictions.map(Path::to_path_buf).unwrap_or_else(|| out_dir.join(PREDICTIONS_FILE));
    let mut summary = serde_json::Map::new();
    if predictions.is_some() || store.is_none() || log_path.is_file() {
        let file = fs::File::open(&log_path).map_err(|e| CliError::Data(format!("{}: {e}", log_path.display())))?;
        let entries = read_prediction_log(file)?;
        let evaluation = score_entries(entries, settings.eval.ci_level)?;
        summary.insert("reports".into(), write_reports(&out_dir, &evaluation, mode)?);
    }
    if let Some(path) = store {
        if !path.is_file() {
            return Err(CliError::Data(format!("store {} does not exist", path.display())));
        }
        let from = from.map(|s| parse_bound(s, false)).transpose()?;
        let to = to.map(|s| parse_bound(s, true)).transpose()?;
        if let (Some(a), Some(b)) = (from, to) {
            if a > b {
                return Err(CliError::Usage("--from is after --to".into()));
            }
        }
        let entries = Store::open(path)?.questionnaires_between(from, to)?;
        let table = summarize(&entries, from, to);
        fs::write(out_dir.join("analytics.md"), table.render_markdown())?;
        fs::write(
            out_dir.join("analytics.json"),
            serde_json::to_string_pretty(&table).expect("summary serializes") + "\n",
        )?;
        summary.insert("submissions".into(), json!(table.total));
    }
    Ok(summary.into())
}

fn infer(cli: &Cli, settings: &Settings, image: &Path, overlay: Option<&Path>) -> Result<serde_json::Value, CliError> {
    let img = load_rgb(image)?;
    let model_dir = cli.model_dir();
    let seg = SegModel::load(&model_dir)?;
    let cls = ClsModel::load(&model_dir)?;
    let r = refine_and_classify(&seg, &cls, &img, settings.eval.saliency_threshold)?;
    if let Some(path) = overlay {
        save_png(&heatmap_overlay(&img, &r.saliency), path)?;
    }
    let mut result = serde_json::to_value(ScanResult::from(&r)).expect("result serializes");
    // Timings differ run to run; keep stdout reproducible.
    if let Some(obj) = result.as_object_mut() {
        obj.remove("stages");
    }
    Ok(result)
}

fn serve(cli: &Cli, addr: std::net::SocketAddr, store: Option<PathBuf>) -> Result<(), CliError> {
    let mut config = ServiceConfig::from_env()?;
    if let Some(dir) = &cli.model_dir {
        config.model_dir = dir.clone();
    }
    if let Some(path) = store {
        config.store_path = path;
    }
    let _ = tracing_subscriber::fmt().with_writer(std::io::stderr).try_init();
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Other(e.to_string()))?;
    runtime.block_on(lesion_triage_service::serve(config, addr))?;
    Ok(())
}
