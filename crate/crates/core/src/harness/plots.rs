//! Static SVG figures written next to each report.

use std::path::Path;

use plotters::prelude::*;

use crate::metrics::ScoredSet;

use super::report::{MetricRow, RowStatus};

const BINS: usize = 20;
const NEG_COLOR: RGBColor = RGBColor(214, 96, 77);
const POS_COLOR: RGBColor = RGBColor(67, 147, 195);
const METRIC_COLORS: [RGBColor; 3] = [RGBColor(67, 147, 195), RGBColor(146, 197, 222), RGBColor(244, 165, 130)];

type PlotResult = Result<(), String>;

fn bin_counts(set: &ScoredSet, label: u8) -> [u32; BINS] {
    let mut counts = [0u32; BINS];
    for (&s, &l) in set.scores().iter().zip(set.labels()) {
        if l == label {
            let b = ((s * BINS as f64) as usize).min(BINS - 1);
            counts[b] += 1;
        }
    }
    counts
}

/// Score histogram with one series per label.
pub fn score_histogram(set: &ScoredSet, title: &str, path: &Path) -> PlotResult {
    let neg = bin_counts(set, 0);
    let pos = bin_counts(set, 1);
    let top = neg.iter().chain(&pos).copied().max().unwrap_or(0).max(1);
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (640, 400)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| e.to_string())?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(48)
            .build_cartesian_2d(0.0f64..1.0f64, 0u32..top + top / 10 + 1)
            .map_err(|e| e.to_string())?;
        chart
            .configure_mesh()
            .x_desc("score")
            .y_desc("examples")
            .disable_x_mesh()
            .draw()
            .map_err(|e| e.to_string())?;
        let width = 1.0 / BINS as f64;
        for (label, counts, color) in [(0u8, neg, NEG_COLOR), (1u8, pos, POS_COLOR)] {
            // the two series share a bin, each taking one half
            let offset = f64::from(label) * width / 2.0;
            chart
                .draw_series(counts.iter().enumerate().map(|(i, &c)| {
                    let x0 = i as f64 * width + offset;
                    Rectangle::new([(x0, 0), (x0 + width / 2.0, c)], color.filled())
                }))
                .map_err(|e| e.to_string())?
                .label(format!("label {label}"))
                .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled()));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| e.to_string())?;
        root.present().map_err(|e| e.to_string())?;
    }
    std::fs::write(path, svg).map_err(|e| format!("{}: {e}", path.display()))
}

/// Grouped bars of accuracy, AUROC and correlation for one dataset's rows.
/// Failed rows are left blank.
pub fn metric_bars(rows: &[&MetricRow], title: &str, path: &Path) -> PlotResult {
    let n = rows.len().max(1);
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (160 + 120 * n as u32, 420)).into_drawing_area();
        root.fill(&WHITE).map_err(|e| e.to_string())?;
        let labels: Vec<String> = rows
            .iter()
            .map(|r| format!("{} ({})", r.technique, r.n_refs_descriptor))
            .collect();
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(48)
            .build_cartesian_2d(0.0f64..n as f64, -1.0f64..1.0f64)
            .map_err(|e| e.to_string())?;
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(n * 2 + 1)
            .x_label_formatter(&|x| {
                let i = x.floor() as usize;
                if (x - x.floor() - 0.5).abs() < 1e-9 && i < labels.len() {
                    labels[i].clone()
                } else {
                    String::new()
                }
            })
            .y_desc("value")
            .draw()
            .map_err(|e| e.to_string())?;
        for (m, name) in ["Accuracy", "AUROC", "Correlation"].iter().enumerate() {
            let color = METRIC_COLORS[m];
            let bars = rows.iter().enumerate().filter_map(move |(i, r)| {
                if r.status != RowStatus::Ok {
                    return None;
                }
                let v = [r.accuracy, r.auroc, r.correlation][m]?;
                let x0 = i as f64 + 0.1 + m as f64 * 0.27;
                Some(Rectangle::new([(x0, 0.0), (x0 + 0.25, v)], color.filled()))
            });
            chart
                .draw_series(bars)
                .map_err(|e| e.to_string())?
                .label(*name)
                .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 10, y + 5)], color.filled()));
        }
        chart
            .configure_series_labels()
            .position(SeriesLabelPosition::LowerRight)
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| e.to_string())?;
        root.present().map_err(|e| e.to_string())?;
    }
    std::fs::write(path, svg).map_err(|e| format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricValues;

    #[test]
    fn writes_svg_files() {
        let dir = tempfile::tempdir().unwrap();
        let set = ScoredSet::from_pairs(vec![0.1, 0.2, 0.9, 1.0, 0.55], vec![0, 0, 1, 1, 0]).unwrap();
        let hist = dir.path().join("h.svg");
        score_histogram(&set, "scores", &hist).unwrap();
        let text = std::fs::read_to_string(&hist).unwrap();
        assert!(text.starts_with("<svg") && text.contains("label 1"));

        let v = MetricValues {
            accuracy: 0.8,
            auroc: 0.9,
            correlation: -0.2,
        };
        let a = MetricRow::ok("d", "SQuArE", "5", v, 5);
        let b = MetricRow::failed("d", "AVA-TQR(-)", "1", "x");
        let bars = dir.path().join("b.svg");
        metric_bars(&[&a, &b], "d", &bars).unwrap();
        let again = dir.path().join("c.svg");
        metric_bars(&[&a, &b], "d", &again).unwrap();
        assert_eq!(std::fs::read(&bars).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn bins_cover_the_unit_interval() {
        let set = ScoredSet::from_pairs(vec![0.0, 0.999, 1.0], vec![1, 1, 1]).unwrap();
        let c = bin_counts(&set, 1);
        assert_eq!(c[0], 1);
        assert_eq!(c[BINS - 1], 2);
    }
}
