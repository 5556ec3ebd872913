use std::path::PathBuf;

use clap::Args;
use gesturewire::eval::{
    export_embeddings, gwet_ac1, macro_f1, majority_precision, write_embeddings_csv, ConfusionMatrix, RatingSheet,
};
use gesturewire::signal::{normalize, Window};
use gesturewire::serve::Classifier;
use serde_json::json;

use crate::project::{report, Project};
use crate::CliError;

/// A `.zip` bundle or a baseline `.json`.
pub fn load_classifier(project: &Project, name: &str) -> Result<Classifier, CliError> {
    let path = project.input(name)?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("zip") => Ok(Classifier::from_bundle(&path)?),
        Some("json") => Ok(Classifier::from_baseline(&path)?),
        _ => Err(CliError::Usage(format!(
            "{name}: expected a .zip bundle or a .json baseline model"
        ))),
    }
}

fn split_windows(project: &Project, split: &str) -> Result<Vec<Window>, CliError> {
    let ids = project.resolve_split(split)?;
    Ok(project
        .labeled_windows(&ids)?
        .into_iter()
        .flat_map(|lr| lr.windows)
        .collect())
}

fn file_stem(name: &str) -> String {
    PathBuf::from(name)
        .file_stem()
        .map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Model bundle (.zip) or baseline model (.json).
    #[arg(long)]
    model: String,
    /// Split name or recording ids.
    #[arg(long, default_value = "val")]
    split: String,
}

pub fn eval(project: &Project, a: EvalArgs) -> Result<(), CliError> {
    let classifier = load_classifier(project, &a.model)?;
    let windows = split_windows(project, &a.split)?;
    if windows.is_empty() {
        return Err(CliError::Data(format!("split `{}` yields no windows", a.split)));
    }
    let ids: Vec<String> = classifier.classes().iter().map(|c| c.id.clone()).collect();
    let mut cm = ConfusionMatrix::new(ids.clone());
    for w in &windows {
        let (pred, _) = classifier.predict(&normalize(w, classifier.norm()))?;
        cm.record_labels(w.label.as_deref().unwrap_or_default(), &pred)?;
    }
    let f1 = macro_f1(&cm);
    let per_class: serde_json::Map<String, serde_json::Value> =
        ids.iter().cloned().zip(cm.per_class_f1().into_iter().map(|v| json!(v))).collect();
    let config = json!({ "model": a.model, "split": a.split });
    let path = project.write_json(
        format!("reports/eval-{}-{}.json", file_stem(&a.model), a.split.replace(',', "+")),
        &report(
            "eval",
            None,
            &config,
            json!({
                "windows": windows.len(),
                "macro_f1": f1,
                "accuracy": cm.accuracy(),
                "per_class_f1": per_class,
                "confusion": cm,
            }),
        ),
    )?;
    println!("macro-F1 {f1:.4} on {} windows; report {}", windows.len(), path.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    /// Model bundle (.zip).
    #[arg(long)]
    model: String,
    #[arg(long, default_value = "val")]
    split: String,
    /// Output CSV, relative to the project.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn embed(project: &Project, a: EmbedArgs) -> Result<(), CliError> {
    let Classifier::Transformer { model, norm, .. } = load_classifier(project, &a.model)? else {
        return Err(CliError::Usage("embeddings need a transformer bundle".into()));
    };
    let rel = a
        .out
        .unwrap_or_else(|| PathBuf::from(format!("reports/embeddings-{}.csv", a.split.replace(',', "+"))));
    let out = project.output(&rel)?;
    let windows: Vec<Window> = split_windows(project, &a.split)?
        .iter()
        .map(|w| normalize(w, &norm))
        .collect();
    let rows = export_embeddings(&model, &windows)?;
    write_embeddings_csv(&rows, &out).map_err(|e| CliError::io(&out, e))?;
    println!("{} embeddings of dimension {} -> {}", rows.len(), model.config.d_model, out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct RateEvalArgs {
    /// Rating sheet JSON.
    #[arg(long)]
    sheet: String,
}

pub fn rate_eval(project: &Project, a: RateEvalArgs) -> Result<(), CliError> {
    let path = project.input(&a.sheet)?;
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let sheet = RatingSheet::from_json(&text)?;
    let precision = majority_precision(&sheet)?;
    let ac1 = gwet_ac1(&sheet)?;
    let config = json!({ "sheet": a.sheet });
    let out = project.write_json(
        format!("reports/rate-eval-{}.json", file_stem(&a.sheet)),
        &report(
            "rate-eval",
            None,
            &config,
            json!({
                "participant": sheet.participant,
                "items": sheet.items.len(),
                "raters": sheet.raters().len(),
                "majority_precision": precision,
                "gwet_ac1": ac1,
            }),
        ),
    )?;
    println!("majority precision {precision:.4}, AC1 {ac1:.4}; report {}", out.display());
    Ok(())
}
