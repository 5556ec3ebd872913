use std::fmt::Write as _;
use std::path::Path;

use crate::model::{ModelError, TransformerModel};
use crate::signal::Window;

/// Windows embedded per forward pass.
const CHUNK: usize = 64;

/// Pooled encoder output of one window, before the classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRow {
    pub window_id: String,
    /// Empty for unlabeled windows.
    pub label: String,
    pub values: Vec<f64>,
}

/// One row per normalized window, in input order.
pub fn export_embeddings(
    model: &TransformerModel,
    windows: &[Window],
) -> Result<Vec<EmbeddingRow>, ModelError> {
    let mut rows = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(CHUNK) {
        let refs: Vec<&Window> = chunk.iter().collect();
        for (w, values) in chunk.iter().zip(model.embed(&refs)?) {
            rows.push(EmbeddingRow {
                window_id: w.id(),
                label: w.label.clone().unwrap_or_default(),
                values,
            });
        }
    }
    Ok(rows)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// CSV with header `window_id,label,e0,...,e{d-1}`.
pub fn embeddings_to_csv(rows: &[EmbeddingRow]) -> String {
    let dim = rows.first().map_or(0, |r| r.values.len());
    let mut out = String::from("window_id,label");
    for i in 0..dim {
        write!(out, ",e{i}").expect("writing to a String");
    }
    out.push('\n');
    for r in rows {
        out.push_str(&csv_field(&r.window_id));
        out.push(',');
        out.push_str(&csv_field(&r.label));
        for v in &r.values {
            write!(out, ",{v}").expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

pub fn write_embeddings_csv(rows: &[EmbeddingRow], path: impl AsRef<Path>) -> std::io::Result<()> {
    std::fs::write(path, embeddings_to_csv(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::signal::CHANNELS;

    #[test]
    fn rows_match_windows_and_dimension() {
        let model = TransformerModel::new(ModelConfig::desk(3), 1).unwrap();
        let w = Window::new((0..CHANNELS * 120).map(|i| (i as f64 * 0.1).sin()).collect(), "rec,1", 0)
            .unwrap()
            .with_label("wave");
        let mut unlabeled = w.clone();
        unlabeled.start_index = 60;
        unlabeled.label = None;
        let windows = vec![w.clone(), w, unlabeled];
        let rows = export_embeddings(&model, &windows).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.values.len() == 32));
        assert_eq!(rows[0].values, rows[1].values);
        let csv = embeddings_to_csv(&rows);
        let mut lines = csv.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("window_id,label,e0,e1,"));
        assert!(header.ends_with(",e31"));
        assert_eq!(lines.clone().count(), 3);
        assert!(lines.next().unwrap().starts_with("\"rec,1@0\",wave,"));
        assert!(csv.lines().nth(3).unwrap().starts_with("\"rec,1@60\",,"));
    }
}
