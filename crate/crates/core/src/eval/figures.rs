use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EvalError, MetricsReport};

/// Bar-chart panels, in display order.
pub const FIGURE_METRICS: [&str; 6] = [
    "train_accuracy",
    "test_accuracy",
    "precision",
    "recall",
    "f1",
    "roc_auc",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FigureFormat {
    #[default]
    Svg,
}

/// Train and test reports for one model, as plotted side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub name: String,
    pub train: MetricsReport,
    pub test: MetricsReport,
}

impl ModelSummary {
    pub fn metric(&self, key: &str) -> f64 {
        match key {
            "train_accuracy" => self.train.accuracy.value,
            "test_accuracy" => self.test.accuracy.value,
            "precision" => self.test.precision.value,
            "recall" => self.test.recall.value,
            "f1" => self.test.f1.value,
            "roc_auc" => self.test.roc_auc.value,
            other => panic!("unknown figure metric {other}"),
        }
    }
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn bar_chart(title: &str, bars: &[(String, f64)]) -> String {
    let (w, h, pad) = (120 * bars.len().max(1) + 80, 320, 40);
    let plot_h = (h - 2 * pad) as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{title}</text>"#,
        w / 2
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        h - pad,
        w - pad,
        h - pad
    );
    for (i, (label, v)) in bars.iter().enumerate() {
        let bh = v.clamp(0.0, 1.0) * plot_h;
        let x = pad + 20 + i * 120;
        let _ = writeln!(
            svg,
            r##"<rect x="{x}" y="{:.2}" width="80" height="{bh:.2}" fill="#4878a8"/>"##,
            (h - pad) as f64 - bh
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.2}" font-size="11" text-anchor="middle">{:.2}</text>"#,
            x + 40,
            (h - pad) as f64 - bh - 4.0,
            v * 100.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">{label}</text>"#,
            x + 40,
            h - pad + 16
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn roc_chart(summaries: &[ModelSummary]) -> String {
    let (size, pad) = (360.0, 40.0);
    let span = size - 2.0 * pad;
    let palette = ["#4878a8", "#d1603d", "#59a14f", "#b07aa1", "#edc948", "#76b7b2"];
    let mut svg = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">"#);
    svg.push('\n');
    let _ = writeln!(
        svg,
        r#"<line x1="{pad}" y1="{}" x2="{}" y2="{pad}" stroke="grey" stroke-dasharray="4"/>"#,
        size - pad,
        size - pad
    );
    for (i, s) in summaries.iter().enumerate() {
        let pts: Vec<String> = s
            .test
            .roc_curve
            .iter()
            .map(|p| format!("{:.2},{:.2}", pad + p.fpr * span, size - pad - p.tpr * span))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{}" points="{}"/>"#,
            palette[i % palette.len()],
            pts.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="11" fill="{}">{}</text>"#,
            size - pad - 100.0,
            size - pad - 10.0 - 14.0 * i as f64,
            palette[i % palette.len()],
            s.name
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Writes, under `out_dir`: one `<metric>.csv` (`model,value`) and
/// `<metric>.svg` per panel in [`FIGURE_METRICS`], plus `roc_<model>.csv`
/// per model and a combined `roc.svg`.
pub fn export_figures(
    summaries: &[ModelSummary],
    out_dir: &Path,
    format: FigureFormat,
) -> Result<Vec<PathBuf>, EvalError> {
    if summaries.is_empty() {
        return Err(EvalError::NoReports);
    }
    std::fs::create_dir_all(out_dir)?;
    let ext = match format {
        FigureFormat::Svg => "svg",
    };
    let mut written = Vec::new();
    for key in FIGURE_METRICS {
        let bars: Vec<(String, f64)> = summaries.iter().map(|s| (s.name.clone(), s.metric(key))).collect();
        let csv_path = out_dir.join(format!("{key}.csv"));
        let mut w = csv::Writer::from_path(&csv_path)?;
        w.write_record(["model", "value"])?;
        for (name, v) in &bars {
            w.write_record([name.as_str(), &v.to_string()])?;
        }
        w.flush()?;
        written.push(csv_path);
        let img = out_dir.join(format!("{key}.{ext}"));
        std::fs::write(&img, bar_chart(key, &bars))?;
        written.push(img);
    }
    for s in summaries {
        let path = out_dir.join(format!("roc_{}.csv", file_stem(&s.name)));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["fpr", "tpr"])?;
        for p in &s.test.roc_curve {
            w.write_record([p.fpr.to_string(), p.tpr.to_string()])?;
        }
        w.flush()?;
        written.push(path);
    }
    let roc = out_dir.join(format!("roc.{ext}"));
    std::fs::write(&roc, roc_chart(summaries))?;
    written.push(roc);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(name: &str, shift: f64) -> ModelSummary {
        let y = [1, 0, 1, 0, 1, 0];
        let s: Vec<f64> = [0.9, 0.2, 0.6, 0.55, 0.3, 0.1]
            .iter()
            .map(|v| (v + shift).min(0.99))
            .collect();
        let r = MetricsReport::from_scores(name, "static", &y, &s, 0.5).unwrap();
        ModelSummary {
            name: name.to_string(),
            train: r.clone(),
            test: r,
        }
    }

    #[test]
    fn writes_six_panels_with_one_row_per_model() {
        let dir = tempfile::tempdir().unwrap();
        let sums: Vec<ModelSummary> = ["ANN", "LSTM", "Bi-LSTM", "CNN"]
            .iter()
            .enumerate()
            .map(|(i, n)| summary(n, i as f64 * 0.05))
            .collect();
        export_figures(&sums, dir.path(), FigureFormat::Svg).unwrap();
        for key in FIGURE_METRICS {
            let mut rdr = csv::Reader::from_path(dir.path().join(format!("{key}.csv"))).unwrap();
            let rows: Vec<(String, f64)> = rdr.deserialize().map(|r| r.unwrap()).collect();
            assert_eq!(rows.len(), 4);
            for (row, s) in rows.iter().zip(&sums) {
                assert_eq!(row.0, s.name);
                assert_eq!(row.1, s.metric(key));
            }
            assert!(dir.path().join(format!("{key}.svg")).is_file());
        }
        assert!(dir.path().join("roc_Bi-LSTM.csv").is_file());
    }

    #[test]
    fn empty_and_unwritable() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            export_figures(&[], dir.path(), FigureFormat::Svg),
            Err(EvalError::NoReports)
        ));
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        assert!(matches!(
            export_figures(&[summary("x", 0.0)], &blocker.join("sub"), FigureFormat::Svg),
            Err(EvalError::Io(_))
        ));
    }
}
