//! Static SVG plot emission: loss curves and score-vs-threshold charts with
//! shaded ground-truth segments.

use std::fs;
use std::path::Path;

use koopdetect::error::Result;

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn from_y(values: impl Iterator<Item = f64>, x_max: f64) -> Frame {
        let mut y_min = f64::INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        for v in values {
            if v.is_finite() {
                y_min = y_min.min(v);
                y_max = y_max.max(v);
            }
        }
        if !y_min.is_finite() || !y_max.is_finite() {
            y_min = 0.0;
            y_max = 1.0;
        }
        if (y_max - y_min).abs() < 1e-12 {
            y_max = y_min + 1.0;
        }
        let pad = (y_max - y_min) * 0.05;
        Frame {
            x_min: 0.0,
            x_max: x_max.max(1.0),
            y_min: y_min - pad,
            y_max: y_max + pad,
        }
    }

    fn sx(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x_min) / (self.x_max - self.x_min) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn sy(&self, y: f64) -> f64 {
        HEIGHT
            - MARGIN_B
            - (y - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"monospace\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"22\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    )
}

fn axes(frame: &Frame, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    let x0 = MARGIN_L;
    let x1 = WIDTH - MARGIN_R;
    let y0 = HEIGHT - MARGIN_B;
    let y1 = MARGIN_T;
    s.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n"
    ));
    for i in 0..=4 {
        let fx = frame.x_min + (frame.x_max - frame.x_min) * i as f64 / 4.0;
        let fy = frame.y_min + (frame.y_max - frame.y_min) * i as f64 / 4.0;
        let px = frame.sx(fx);
        let py = frame.sy(fy);
        s.push_str(&format!(
            "<line x1=\"{px}\" y1=\"{y0}\" x2=\"{px}\" y2=\"{}\" stroke=\"black\"/>\n\
             <text x=\"{px}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{:.4}</text>\n",
            y0 + 5.0,
            y0 + 18.0,
            fx
        ));
        s.push_str(&format!(
            "<line x1=\"{}\" y1=\"{py}\" x2=\"{x0}\" y2=\"{py}\" stroke=\"black\"/>\n\
             <text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{:.4}</text>\n",
            x0 - 5.0,
            x0 - 8.0,
            py + 4.0,
            fy
        ));
    }
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    ));
    s.push_str(&format!(
        "<text x=\"16\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" \
         transform=\"rotate(-90 16 {})\">{}</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    ));
    s
}

fn polyline(frame: &Frame, ys: &[f64], color: &str) -> String {
    let points: Vec<String> = ys
        .iter()
        .enumerate()
        .map(|(i, &y)| format!("{:.2},{:.2}", frame.sx(i as f64), frame.sy(y)))
        .collect();
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.4\" points=\"{}\"/>\n",
        points.join(" ")
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Multi-series line chart; series are (label, color, values) drawn over
/// their index.
pub fn line_chart(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(&str, &str, Vec<f64>)],
) -> Result<()> {
    let longest = series.iter().map(|(_, _, v)| v.len()).max().unwrap_or(1);
    let frame = Frame::from_y(
        series.iter().flat_map(|(_, _, v)| v.iter().copied()),
        (longest.saturating_sub(1)) as f64,
    );
    let mut svg = header(title);
    svg.push_str(&axes(&frame, x_label, y_label));
    for (i, (label, color, values)) in series.iter().enumerate() {
        svg.push_str(&polyline(&frame, values, color));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{}</text>\n",
            WIDTH - MARGIN_R - 150.0,
            MARGIN_T + 16.0 * (i + 1) as f64,
            escape(label)
        ));
    }
    svg.push_str("</svg>\n");
    fs::write(path, svg)?;
    Ok(())
}

/// Anomaly-score chart: score polyline, dashed threshold line, and shaded
/// ground-truth segments.
pub fn score_chart(
    path: &Path,
    title: &str,
    scores: &[f64],
    threshold: f64,
    labels: Option<&[u8]>,
) -> Result<()> {
    let frame = Frame::from_y(
        scores.iter().copied().chain(std::iter::once(threshold)),
        (scores.len().saturating_sub(1)) as f64,
    );
    let mut svg = header(title);

    if let Some(labels) = labels {
        let y_top = MARGIN_T;
        let h = HEIGHT - MARGIN_T - MARGIN_B;
        let mut t = 0;
        while t < labels.len() {
            if labels[t] == 1 {
                let start = t;
                while t < labels.len() && labels[t] == 1 {
                    t += 1;
                }
                let x = frame.sx(start as f64);
                let w = (frame.sx(t as f64) - x).max(1.0);
                svg.push_str(&format!(
                    "<rect x=\"{x:.2}\" y=\"{y_top}\" width=\"{w:.2}\" height=\"{h}\" \
                     fill=\"#f4b6b6\" opacity=\"0.6\"/>\n"
                ));
            } else {
                t += 1;
            }
        }
    }

    svg.push_str(&axes(&frame, "time index", "prediction error"));
    svg.push_str(&polyline(&frame, scores, "#1f77b4"));
    let ty = frame.sy(threshold);
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{ty:.2}\" x2=\"{}\" y2=\"{ty:.2}\" stroke=\"#d62728\" \
         stroke-dasharray=\"6,4\" stroke-width=\"1.4\"/>\n\
         <text x=\"{}\" y=\"{:.2}\" font-size=\"11\" fill=\"#d62728\">threshold</text>\n",
        MARGIN_L,
        WIDTH - MARGIN_R,
        MARGIN_L + 6.0,
        ty - 6.0
    ));
    svg.push_str("</svg>\n");
    fs::write(path, svg)?;
    Ok(())
}
