//! Pixel-level PNG rendering for run artifacts: loss curves, metric bars,
//! and attention heatmaps. Charts are drawn directly into an RGB buffer
//! with an embedded 5x7 bitmap font, so plots stay deterministic and free
//! of display dependencies.

use image::{Rgb, RgbImage};
use ndarray::Array2;
use seeclip_core::eval::{EvalReport, ProtocolReport};
use seeclip_core::train::read_log_jsonl;
use seeclip_core::{Error, Result};
use std::path::{Path, PathBuf};

pub const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
pub const AXIS: Rgb<u8> = Rgb([40, 40, 40]);
pub const PALETTE: [Rgb<u8>; 6] = [
    Rgb([31, 119, 180]),
    Rgb([255, 127, 14]),
    Rgb([44, 160, 44]),
    Rgb([214, 39, 40]),
    Rgb([148, 103, 189]),
    Rgb([127, 127, 127]),
];

const GLYPH_WIDTH: u32 = 5;
/// Glyph plus one pixel of tracking.
pub const CHAR_ADVANCE: u32 = GLYPH_WIDTH + 1;

/// 5x7 bitmap, one byte per row, low five bits used, bit 4 leftmost.
/// Lowercase folds to uppercase; anything unknown renders as a box.
fn glyph(ch: char) -> [u8; 7] {
    match ch.to_ascii_uppercase() {
        ' ' => [0, 0, 0, 0, 0, 0, 0],
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        'A' => [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x19, 0x15, 0x13, 0x11, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '.' => [0, 0, 0, 0, 0, 0x0C, 0x0C],
        ',' => [0, 0, 0, 0, 0, 0x0C, 0x08],
        '-' => [0, 0, 0, 0x1F, 0, 0, 0],
        '_' => [0, 0, 0, 0, 0, 0, 0x1F],
        ':' => [0, 0x0C, 0x0C, 0, 0x0C, 0x0C, 0],
        '/' => [0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10],
        '%' => [0x19, 0x19, 0x02, 0x04, 0x08, 0x13, 0x13],
        '(' => [0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02],
        ')' => [0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08],
        _ => [0x1F, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1F],
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

pub fn draw_text(img: &mut RgbImage, x: i64, y: i64, text: &str, color: Rgb<u8>) {
    for (i, ch) in text.chars().enumerate() {
        let rows = glyph(ch);
        let gx = x + (i as i64) * CHAR_ADVANCE as i64;
        for (dy, row) in rows.iter().enumerate() {
            for dx in 0..GLYPH_WIDTH as i64 {
                if row & (1 << (GLYPH_WIDTH as i64 - 1 - dx)) != 0 {
                    put(img, gx + dx, y + dy as i64, color);
                }
            }
        }
    }
}

pub fn text_width(text: &str) -> u32 {
    text.chars().count() as u32 * CHAR_ADVANCE
}

fn draw_line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: Rgb<u8>) {
    let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = a.0 + (b.0 - a.0) * t;
        let y = a.1 + (b.1 - a.1) * t;
        put(img, x.round() as i64, y.round() as i64, color);
    }
}

fn fill_rect(img: &mut RgbImage, x0: i64, y0: i64, w: i64, h: i64, color: Rgb<u8>) {
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            put(img, x, y, color);
        }
    }
}

/// Five-stop gradient from dark purple through teal to yellow, t in [0,1].
pub fn colormap(t: f64) -> Rgb<u8> {
    const STOPS: [(f64, [u8; 3]); 5] = [
        (0.00, [68, 1, 84]),
        (0.25, [59, 82, 139]),
        (0.50, [33, 145, 140]),
        (0.75, [94, 201, 98]),
        (1.00, [253, 231, 37]),
    ];
    let t = t.clamp(0.0, 1.0);
    let mut lo = STOPS[0];
    let mut hi = STOPS[STOPS.len() - 1];
    for pair in STOPS.windows(2) {
        if t >= pair[0].0 && t <= pair[1].0 {
            lo = pair[0];
            hi = pair[1];
            break;
        }
    }
    let span = (hi.0 - lo.0).max(f64::EPSILON);
    let f = (t - lo.0) / span;
    let mix = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * f).round() as u8;
    Rgb([mix(lo.1[0], hi.1[0]), mix(lo.1[1], hi.1[1]), mix(lo.1[2], hi.1[2])])
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const MARGIN_LEFT: i64 = 48;
const MARGIN_RIGHT: i64 = 10;
const MARGIN_TOP: i64 = 12;
const MARGIN_BOTTOM: i64 = 22;

/// Multi-series line chart with min/max axis labels and a legend.
pub fn render_line_chart(series: &[Series], width: u32, height: u32) -> Result<RgbImage> {
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::Data("no points to plot".into()));
    }
    let mut img = RgbImage::from_pixel(width, height, BACKGROUND);
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for &(x, y) in &s.points {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if x_max <= x_min {
        x_max = x_min + 1.0;
    }
    if y_max <= y_min {
        y_max = y_min + 1.0;
    }
    let pad = (y_max - y_min) * 0.05;
    y_min -= pad;
    y_max += pad;

    let plot_w = width as i64 - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = height as i64 - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT as f64 + (x - x_min) / (x_max - x_min) * plot_w as f64;
    let sy = |y: f64| {
        (MARGIN_TOP + plot_h) as f64 - (y - y_min) / (y_max - y_min) * plot_h as f64
    };

    // axes
    draw_line(
        &mut img,
        (MARGIN_LEFT as f64, MARGIN_TOP as f64),
        (MARGIN_LEFT as f64, (MARGIN_TOP + plot_h) as f64),
        AXIS,
    );
    draw_line(
        &mut img,
        (MARGIN_LEFT as f64, (MARGIN_TOP + plot_h) as f64),
        ((MARGIN_LEFT + plot_w) as f64, (MARGIN_TOP + plot_h) as f64),
        AXIS,
    );
    draw_text(&mut img, 2, MARGIN_TOP, &format!("{y_max:.3}"), AXIS);
    draw_text(&mut img, 2, MARGIN_TOP + plot_h - 7, &format!("{y_min:.3}"), AXIS);
    draw_text(
        &mut img,
        MARGIN_LEFT,
        MARGIN_TOP + plot_h + 6,
        &format!("{x_min:.0}"),
        AXIS,
    );
    let x_label = format!("{x_max:.0}");
    draw_text(
        &mut img,
        MARGIN_LEFT + plot_w - text_width(&x_label) as i64,
        MARGIN_TOP + plot_h + 6,
        &x_label,
        AXIS,
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        for pair in s.points.windows(2) {
            draw_line(
                &mut img,
                (sx(pair[0].0), sy(pair[0].1)),
                (sx(pair[1].0), sy(pair[1].1)),
                color,
            );
        }
        // legend swatch plus name, stacked from the top-right corner
        let entry_w = 12 + text_width(&s.name) as i64;
        let lx = MARGIN_LEFT + plot_w - entry_w;
        let ly = MARGIN_TOP + 2 + (i as i64) * 10;
        fill_rect(&mut img, lx, ly, 8, 8, color);
        draw_text(&mut img, lx + 12, ly, &s.name, AXIS);
    }
    Ok(img)
}

/// Heatmap with `cell`-pixel squares, normalized over the matrix range.
pub fn render_heatmap(matrix: &Array2<f64>, cell: u32) -> Result<RgbImage> {
    if matrix.is_empty() || cell == 0 {
        return Err(Error::Data("nothing to render".into()));
    }
    let lo = matrix.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = matrix.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(f64::EPSILON);
    let mut img = RgbImage::new(matrix.ncols() as u32 * cell, matrix.nrows() as u32 * cell);
    for ((r, c), &v) in matrix.indexed_iter() {
        let color = colormap((v - lo) / span);
        fill_rect(
            &mut img,
            (c as u32 * cell) as i64,
            (r as u32 * cell) as i64,
            cell as i64,
            cell as i64,
            color,
        );
    }
    Ok(img)
}

/// Grouped bars for values in [0, 1]: one group per label, one bar per
/// series member.
pub fn render_bar_chart(
    group_labels: &[String],
    series: &[(String, Vec<f64>)],
    width: u32,
    height: u32,
) -> Result<RgbImage> {
    if group_labels.is_empty() || series.is_empty() {
        return Err(Error::Data("no bars to plot".into()));
    }
    for (name, values) in series {
        if values.len() != group_labels.len() {
            return Err(Error::Data(format!(
                "series {name} has {} values for {} groups",
                values.len(),
                group_labels.len()
            )));
        }
    }
    let mut img = RgbImage::from_pixel(width, height, BACKGROUND);
    let plot_w = width as i64 - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = height as i64 - MARGIN_TOP - MARGIN_BOTTOM;
    let base = MARGIN_TOP + plot_h;

    draw_line(&mut img, (MARGIN_LEFT as f64, MARGIN_TOP as f64), (MARGIN_LEFT as f64, base as f64), AXIS);
    draw_line(&mut img, (MARGIN_LEFT as f64, base as f64), ((MARGIN_LEFT + plot_w) as f64, base as f64), AXIS);
    draw_text(&mut img, 2, MARGIN_TOP, "1.000", AXIS);
    draw_text(&mut img, 2, base - 7, "0.000", AXIS);

    let groups = group_labels.len() as i64;
    let group_w = plot_w / groups;
    let bar_w = ((group_w - 8) / series.len() as i64).max(1);
    for (g, label) in group_labels.iter().enumerate() {
        let gx = MARGIN_LEFT + g as i64 * group_w;
        for (s, (_, values)) in series.iter().enumerate() {
            let v = values[g].clamp(0.0, 1.0);
            let h = (v * plot_h as f64).round() as i64;
            fill_rect(
                &mut img,
                gx + 4 + s as i64 * bar_w,
                base - h,
                bar_w.max(1) - 1,
                h,
                PALETTE[s % PALETTE.len()],
            );
        }
        let short: String = label.chars().take(10).collect();
        draw_text(&mut img, gx + 4, base + 6, &short, AXIS);
    }
    for (s, (name, _)) in series.iter().enumerate() {
        let lx = MARGIN_LEFT + 4 + s as i64 * 92;
        fill_rect(&mut img, lx, MARGIN_TOP - 10, 8, 8, PALETTE[s % PALETTE.len()]);
        draw_text(&mut img, lx + 12, MARGIN_TOP - 10, name, AXIS);
    }
    Ok(img)
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path)
        .map_err(|e| Error::Data(format!("writing {}: {e}", path.display())))
}

fn parse_csv_matrix(text: &str) -> Result<Array2<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|cell| {
                cell.trim().parse::<f64>().map_err(|e| {
                    Error::Data(format!("csv line {}: {e}", i + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Data(format!(
                    "csv line {} has {} cells, expected {}",
                    i + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Data("empty csv".into()));
    }
    let shape = (rows.len(), rows[0].len());
    Array2::from_shape_vec(shape, rows.into_iter().flatten().collect())
        .map_err(|e| Error::Data(e.to_string()))
}

fn loss_series(log_path: &Path) -> Result<Vec<Series>> {
    let records = read_log_jsonl(log_path)?;
    let pick = |name: &str, f: fn(&seeclip_core::train::StepRecord) -> f64| Series {
        name: name.to_string(),
        points: records.iter().map(|r| (r.step as f64, f(r))).collect(),
    };
    Ok(vec![
        pick("total", |r| r.total),
        pick("align", |r| r.align),
        pick("repulse", |r| r.repulse),
        pick("cohere", |r| r.cohere),
        pick("regularize", |r| r.regularize),
    ])
}

fn metric_bars_from_reports(reports: &[EvalReport]) -> (Vec<String>, Vec<(String, Vec<f64>)>) {
    let labels: Vec<String> = reports.iter().map(|r| r.target_domain.clone()).collect();
    let col = |f: fn(&EvalReport) -> f64| reports.iter().map(f).collect::<Vec<f64>>();
    let series = vec![
        ("acc".to_string(), col(|r| r.closed_acc)),
        ("known".to_string(), col(|r| r.known_acc)),
        ("unknown".to_string(), col(|r| r.unknown_acc)),
        ("h-score".to_string(), col(|r| r.h_score)),
    ];
    (labels, series)
}

/// Render every recognized artifact in `run_dir` into `out_dir` and list
/// what was written.
pub fn render_run_artifacts(run_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::Data(format!("{}: {e}", out_dir.display())))?;
    let mut written = Vec::new();

    let log_path = run_dir.join("train_log.jsonl");
    if log_path.is_file() {
        let img = render_line_chart(&loss_series(&log_path)?, 720, 400)?;
        let path = out_dir.join("loss_curves.png");
        save_png(&img, &path)?;
        written.push(path);
    }

    let read_json = |path: &Path| -> Result<String> {
        std::fs::read_to_string(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    };
    let protocol_path = run_dir.join("protocol_report.json");
    let eval_path = run_dir.join("eval_report.json");
    let reports: Option<Vec<EvalReport>> = if protocol_path.is_file() {
        let report: ProtocolReport = serde_json::from_str(&read_json(&protocol_path)?)
            .map_err(|e| Error::Data(format!("{}: {e}", protocol_path.display())))?;
        Some(report.reports)
    } else if eval_path.is_file() {
        let report: EvalReport = serde_json::from_str(&read_json(&eval_path)?)
            .map_err(|e| Error::Data(format!("{}: {e}", eval_path.display())))?;
        Some(vec![report])
    } else {
        None
    };
    if let Some(reports) = reports {
        let (labels, series) = metric_bars_from_reports(&reports);
        let img = render_bar_chart(&labels, &series, 720, 400)?;
        let path = out_dir.join("metric_bars.png");
        save_png(&img, &path)?;
        written.push(path);
    }

    let attention_dir = run_dir.join("attention");
    if attention_dir.is_dir() {
        let mut csvs: Vec<PathBuf> = std::fs::read_dir(&attention_dir)
            .map_err(|e| Error::Data(format!("{}: {e}", attention_dir.display())))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
            .collect();
        csvs.sort();
        for csv in csvs {
            let matrix = parse_csv_matrix(&read_json(&csv)?)?;
            let img = render_heatmap(&matrix, 24)?;
            let stem = csv.file_stem().unwrap_or_default().to_string_lossy();
            let path = out_dir.join(format!("{stem}.png"));
            save_png(&img, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn glyphs_cover_the_characters_charts_emit() {
        let blank = [0u8; 7];
        for ch in "abcdefghijklmnopqrstuvwxyz0123456789.-_:/%(),".chars() {
            assert_ne!(glyph(ch), blank, "glyph for {ch:?} is blank");
        }
        assert_eq!(glyph(' '), blank);
        // unknown characters render as a box rather than vanishing
        assert_ne!(glyph('~'), blank);
    }

    #[test]
    fn text_rendering_marks_pixels_and_clips_offscreen() {
        let mut img = RgbImage::from_pixel(60, 12, BACKGROUND);
        draw_text(&mut img, 1, 2, "abc1", AXIS);
        let inked = img.pixels().filter(|p| **p == AXIS).count();
        assert!(inked > 20, "only {inked} pixels inked");
        // off-canvas draws must not panic
        draw_text(&mut img, -30, -30, "clip", AXIS);
        draw_text(&mut img, 1000, 1000, "clip", AXIS);
        assert_eq!(text_width("abcd"), 24);
    }

    #[test]
    fn colormap_hits_its_stops_and_clamps() {
        assert_eq!(colormap(0.0), Rgb([68, 1, 84]));
        assert_eq!(colormap(1.0), Rgb([253, 231, 37]));
        assert_eq!(colormap(0.5), Rgb([33, 145, 140]));
        assert_eq!(colormap(-3.0), colormap(0.0));
        assert_eq!(colormap(7.0), colormap(1.0));
    }

    #[test]
    fn line_chart_is_deterministic_and_needs_points() {
        let series = vec![
            Series { name: "a".into(), points: vec![(0.0, 1.0), (1.0, 0.5), (2.0, 0.8)] },
            Series { name: "b".into(), points: vec![(0.0, 0.2), (2.0, 0.4)] },
        ];
        let one = render_line_chart(&series, 200, 120).unwrap();
        let two = render_line_chart(&series, 200, 120).unwrap();
        assert_eq!(one.as_raw(), two.as_raw());
        assert_eq!((one.width(), one.height()), (200, 120));
        let non_bg = one.pixels().filter(|p| **p != BACKGROUND).count();
        assert!(non_bg > 100, "chart looks empty: {non_bg} pixels");
        assert!(render_line_chart(&[], 100, 100).is_err());
    }

    #[test]
    fn heatmap_scales_cells_and_orders_colors() {
        let m = arr2(&[[0.0, 0.5, 1.0], [1.0, 0.5, 0.0]]);
        let img = render_heatmap(&m, 10).unwrap();
        assert_eq!((img.width(), img.height()), (30, 20));
        assert_eq!(*img.get_pixel(5, 5), colormap(0.0));
        assert_eq!(*img.get_pixel(25, 5), colormap(1.0));
        assert_eq!(*img.get_pixel(15, 15), colormap(0.5));

        let flat = arr2(&[[2.0, 2.0], [2.0, 2.0]]);
        let img = render_heatmap(&flat, 4).unwrap();
        let first = *img.get_pixel(0, 0);
        assert!(img.pixels().all(|p| *p == first));
    }

    #[test]
    fn bar_chart_validates_series_lengths() {
        let labels = vec!["art".to_string(), "photo".to_string()];
        let ok = vec![("h".to_string(), vec![0.5, 0.75])];
        let img = render_bar_chart(&labels, &ok, 240, 140).unwrap();
        assert!(img.pixels().any(|p| *p == PALETTE[0]));
        let bad = vec![("h".to_string(), vec![0.5])];
        assert!(render_bar_chart(&labels, &bad, 240, 140).is_err());
    }

    #[test]
    fn csv_matrices_round_trip_and_reject_ragged_rows() {
        let m = parse_csv_matrix("0.25,0.75\n0.5,0.5\n").unwrap();
        assert_eq!(m, arr2(&[[0.25, 0.75], [0.5, 0.5]]));
        assert!(parse_csv_matrix("1,2\n3\n").is_err());
        assert!(parse_csv_matrix("").is_err());
        assert!(parse_csv_matrix("a,b\n").is_err());
    }

    #[test]
    fn run_artifacts_render_from_a_fabricated_run_directory() {
        use seeclip_core::train::{write_log_jsonl, StepRecord};
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path();
        let records: Vec<StepRecord> = (0..8)
            .map(|i| StepRecord {
                step: i,
                epoch: 0,
                phase: "alignment".into(),
                align: 1.0 / (i + 1) as f64,
                repulse: 0.1,
                cohere: 0.2,
                regularize: 0.05,
                total: 1.0 / (i + 1) as f64 + 0.35,
                pseudo: vec![],
            })
            .collect();
        write_log_jsonl(&records, &run.join("train_log.jsonl")).unwrap();
        std::fs::create_dir(run.join("attention")).unwrap();
        std::fs::write(run.join("attention/attention_a.csv"), "0.2,0.8\n0.6,0.4\n")
            .unwrap();

        let out = run.join("plots");
        let written = render_run_artifacts(run, &out).unwrap();
        assert_eq!(written.len(), 2);
        for path in &written {
            let img = image::open(path).unwrap();
            assert!(img.width() > 0 && img.height() > 0);
        }
        assert!(out.join("loss_curves.png").is_file());
        assert!(out.join("attention_a.png").is_file());
    }
}
