//! Human-readable run summary plus dependency-free SVG plots.

use std::fmt::Write as _;
use std::path::Path;

use pgov_core::error::{Error, Result};
use pgov_core::io;
use pgov_core::train::LossRecord;

/// Write `summary.txt` and `loss_curves.svg` from the run's artifacts.
pub fn emit_report(out: &Path) -> Result<()> {
    let report_path = out.join("eval_report.csv");
    if !report_path.exists() {
        return Err(Error::MissingArtifacts(report_path));
    }
    let metrics = io::read_eval_report_csv(&report_path)?;

    let mut text = String::from("run summary\n===========\n");
    let scalar = |name: &str| metrics.get(&(name.to_string(), String::new())).copied();
    if let Some(v) = scalar("miou") {
        writeln!(text, "mIoU: {:.4} ({:.1}%)", v, 100.0 * v).unwrap();
    }
    if let Some(v) = scalar("macc") {
        writeln!(text, "mAcc: {:.4} ({:.1}%)", v, 100.0 * v).unwrap();
    }
    if let Some(v) = scalar("hiou") {
        writeln!(
            text,
            "hIoU: {:.4} (base {:.4}, novel {:.4})",
            v,
            scalar("miou_base").unwrap_or(0.0),
            scalar("miou_novel").unwrap_or(0.0)
        )
        .unwrap();
    }
    if let Some(v) = scalar("unmatched_predictions") {
        writeln!(text, "unmatched predictions: {v}").unwrap();
    }
    if let Some(v) = scalar("heldout_paircos") {
        writeln!(text, "held-out matched-pair cosine: {v:.4}").unwrap();
    }
    text.push_str("\nper-class IoU\n-------------\n");
    let mut per_class: Vec<(&String, f64)> = metrics
        .iter()
        .filter(|((metric, class), _)| metric == "iou" && !class.is_empty())
        .map(|((_, class), v)| (class, *v))
        .collect();
    per_class.sort_by(|a, b| a.0.cmp(b.0));
    for (class, v) in per_class {
        writeln!(text, "{class:<12} {v:.4}").unwrap();
    }
    io::atomic_write(&out.join("summary.txt"), text.as_bytes())?;

    let mut curves: Vec<(String, Vec<LossRecord>)> = Vec::new();
    for stage in [1, 2] {
        let path = out.join(format!("losses_stage{stage}.csv"));
        if path.exists() {
            curves.push((format!("stage{stage}"), io::read_loss_csv(&path)?));
        }
    }
    let svg = loss_curves_svg(&curves);
    io::atomic_write(&out.join("loss_curves.svg"), svg.as_bytes())
}

const PLOT_W: f64 = 640.0;
const PLOT_H: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn svg_header(title: &str) -> String {
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{tx}\" y=\"20\" font-family=\"monospace\" font-size=\"14\" ",
            "text-anchor=\"middle\">{title}</text>\n"
        ),
        w = PLOT_W,
        h = PLOT_H,
        tx = PLOT_W / 2.0,
        title = title
    )
}

/// One polyline per (stage, loss column) over the step axis.
pub fn loss_curves_svg(curves: &[(String, Vec<LossRecord>)]) -> String {
    let mut svg = svg_header("training losses");
    let colors = ["#c0392b", "#2980b9", "#27ae60", "#8e44ad", "#d35400", "#16a085"];
    let max_y = curves
        .iter()
        .flat_map(|(_, r)| r.iter().map(|r| r.total))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let max_x = curves
        .iter()
        .map(|(_, r)| r.len().saturating_sub(1))
        .max()
        .unwrap_or(0)
        .max(1) as f64;

    let x_of = |i: usize| MARGIN + (PLOT_W - 2.0 * MARGIN) * i as f64 / max_x;
    let y_of = |v: f64| PLOT_H - MARGIN - (PLOT_H - 2.0 * MARGIN) * (v / max_y);

    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = PLOT_H - MARGIN,
        r = PLOT_W - MARGIN,
        t = MARGIN
    ));
    svg.push_str(&format!(
        "<text x=\"{m}\" y=\"{y}\" font-family=\"monospace\" font-size=\"10\">0</text>\n<text x=\"{m}\" y=\"{t}\" font-family=\"monospace\" font-size=\"10\">{max:.3}</text>\n",
        m = 4.0,
        y = PLOT_H - MARGIN,
        t = MARGIN,
        max = max_y
    ));

    let mut color_idx = 0;
    for (stage, records) in curves {
        for (column, pick) in [
            ("alignment", 0usize),
            ("consistency", 1),
            ("total", 2),
        ] {
            let mut points = String::new();
            for (i, r) in records.iter().enumerate() {
                let v = match pick {
                    0 => r.alignment,
                    1 => r.consistency,
                    _ => r.total,
                };
                let _ = write!(points, "{:.2},{:.2} ", x_of(i), y_of(v.max(0.0)));
            }
            let color = colors[color_idx % colors.len()];
            svg.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                points.trim_end()
            ));
            svg.push_str(&format!(
                "<text x=\"{x}\" y=\"{y}\" font-family=\"monospace\" font-size=\"10\" fill=\"{color}\">{stage} {column}</text>\n",
                x = PLOT_W - MARGIN + 2.0 - 120.0,
                y = MARGIN + 12.0 * color_idx as f64,
            ));
            color_idx += 1;
        }
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn bar_chart_svg(title: &str, labels: &[String], values: &[f64]) -> String {
    let mut svg = svg_header(title);
    let max_v = values.iter().copied().fold(0.0f64, f64::max).max(1e-9);
    let n = labels.len().max(1) as f64;
    let slot = (PLOT_W - 2.0 * MARGIN) / n;
    for (i, (label, v)) in labels.iter().zip(values).enumerate() {
        let h = (PLOT_H - 2.0 * MARGIN) * (v / max_v);
        let x = MARGIN + slot * i as f64 + slot * 0.15;
        let y = PLOT_H - MARGIN - h;
        svg.push_str(&format!(
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"#2980b9\"/>\n",
            w = slot * 0.7
        ));
        svg.push_str(&format!(
            "<text x=\"{cx:.2}\" y=\"{ty:.2}\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"middle\">{label}</text>\n",
            cx = x + slot * 0.35,
            ty = PLOT_H - MARGIN + 14.0
        ));
        svg.push_str(&format!(
            "<text x=\"{cx:.2}\" y=\"{vy:.2}\" font-family=\"monospace\" font-size=\"10\" text-anchor=\"middle\">{v:.3}</text>\n",
            cx = x + slot * 0.35,
            vy = y - 4.0
        ));
    }
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = PLOT_H - MARGIN,
        r = PLOT_W - MARGIN
    ));
    svg.push_str("</svg>\n");
    svg
}
