//! Report rendering: text table, CSV, and a bar-chart image.

use std::path::Path;

use ndarray::Array3;
use stisr_core::{MetricReport, RasterImage};

/// Metric column order used everywhere: PSNR up, SSIM up, LPIPS down,
/// ACC up, NED up.
const COLUMNS: [&str; 5] = ["PSNR^", "SSIM^", "LPIPSv", "ACC^", "NED^"];

fn metric_values(report: &MetricReport) -> [Option<f64>; 5] {
    let a = &report.aggregate;
    [a.psnr_db, a.ssim, a.lpips, a.acc, a.ned]
}

fn fmt_cell(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_infinite() => "inf".to_string(),
        Some(x) => format!("{x:.4}"),
        None => "-".to_string(),
    }
}

/// Plain-text comparison table, one row per report.
pub fn render_table(reports: &[(String, MetricReport)]) -> String {
    let mut out = String::new();
    let name_w = reports
        .iter()
        .map(|(n, _)| n.len())
        .max()
        .unwrap_or(5)
        .max(5);
    out.push_str(&format!("{:<name_w$}  lines  ", "model"));
    for c in COLUMNS {
        out.push_str(&format!("{c:>9} "));
    }
    out.push('\n');
    for (name, report) in reports {
        out.push_str(&format!(
            "{:<name_w$}  {:>5}  ",
            name, report.aggregate.lines
        ));
        for v in metric_values(report) {
            out.push_str(&format!("{:>9} ", fmt_cell(v)));
        }
        out.push('\n');
    }
    out
}

/// Per-line rows plus a final aggregate row, through a standard CSV writer.
pub fn write_csv(report: &MetricReport, path: &Path) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "id",
        "language",
        "psnr_db",
        "ssim",
        "lpips",
        "exact_match",
        "ned",
        "prediction",
    ])?;
    let num = |v: Option<f64>| match v {
        Some(x) if x.is_infinite() => "inf".to_string(),
        Some(x) => format!("{x}"),
        None => String::new(),
    };
    for line in &report.per_line {
        w.write_record([
            line.id.clone(),
            line.language.to_string(),
            num(line.psnr_db),
            num(line.ssim),
            num(line.lpips),
            line.exact_match.map(|b| b.to_string()).unwrap_or_default(),
            num(line.ned),
            line.prediction.clone().unwrap_or_default(),
        ])?;
    }
    let a = &report.aggregate;
    w.write_record([
        "AGGREGATE".to_string(),
        format!("{}", a.lines),
        num(a.psnr_db),
        num(a.ssim),
        num(a.lpips),
        num(a.acc),
        num(a.ned),
        format!("scored={}", a.scored_lines),
    ])?;
    w.flush()?;
    Ok(())
}

const PALETTE: [[f32; 3]; 6] = [
    [0.20, 0.45, 0.80],
    [0.85, 0.45, 0.15],
    [0.25, 0.65, 0.35],
    [0.75, 0.25, 0.55],
    [0.55, 0.55, 0.20],
    [0.35, 0.70, 0.75],
];

/// Grouped bar chart: one group per metric (fixed order PSNR, SSIM, LPIPS,
/// ACC, NED), one bar per report, heights normalized by the group maximum.
/// No text is drawn; the legend is the color order, which matches the input
/// order.
pub fn render_bar_chart(reports: &[(String, MetricReport)]) -> anyhow::Result<RasterImage> {
    if reports.is_empty() {
        anyhow::bail!("no reports to plot");
    }
    let k = reports.len().min(PALETTE.len());
    let (bar_w, bar_gap, group_gap, margin) = (16usize, 4usize, 28usize, 24usize);
    let group_w = k * (bar_w + bar_gap);
    let width = 2 * margin + 5 * group_w + 4 * group_gap;
    let (height, plot_h) = (260usize, 200usize);
    let base_y = height - margin;

    let mut canvas = Array3::<f32>::from_elem((height, width, 3), 1.0);
    let mut fill = |y0: usize, y1: usize, x0: usize, x1: usize, color: [f32; 3]| {
        for y in y0..y1.min(height) {
            for x in x0..x1.min(width) {
                for c in 0..3 {
                    canvas[(y, x, c)] = color[c];
                }
            }
        }
    };

    // Legend swatches, one per report, upper left.
    for (i, _) in reports.iter().take(k).enumerate() {
        fill(8, 16, margin + i * 16, margin + i * 16 + 8, PALETTE[i]);
    }

    let values: Vec<[Option<f64>; 5]> = reports.iter().map(|(_, r)| metric_values(r)).collect();
    for (g, _) in COLUMNS.iter().enumerate() {
        let group_x = margin + g * (group_w + group_gap);
        let finite_max = values
            .iter()
            .filter_map(|v| v[g])
            .map(|x| if x.is_finite() { x } else { 0.0 })
            .fold(0.0_f64, f64::max);
        for (i, v) in values.iter().take(k).enumerate() {
            let frac = match v[g] {
                None => 0.0,
                Some(x) if x.is_infinite() => 1.0,
                Some(x) if finite_max > 0.0 => (x / finite_max).clamp(0.0, 1.0),
                Some(_) => 0.0,
            };
            let h = (frac * plot_h as f64).round() as usize;
            let x0 = group_x + i * (bar_w + bar_gap);
            fill(base_y - h, base_y, x0, x0 + bar_w, PALETTE[i]);
        }
    }
    // Baseline.
    fill(base_y, base_y + 2, margin / 2, width - margin / 2, [0.1, 0.1, 0.1]);

    Ok(RasterImage::from_array(canvas)?)
}
