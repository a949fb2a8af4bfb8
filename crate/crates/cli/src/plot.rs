//! Deterministic SVG rendering of motion sequences. All coordinates are
//! printed with fixed precision, so identical inputs give identical bytes.

use std::fmt::Write;

use reactionmamba_core::model::MotionSequence;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PlotMode {
    /// Top view (x, z) of every joint's path.
    Trajectory,
    /// Front view (x, y) of evenly spaced poses, joints chained in index order.
    SkeletonFrames,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const DASHES: [&str; 3] = ["none", "6,3", "2,2"];
const PANEL: f64 = 240.0;
const MARGIN: f64 = 30.0;
const LEGEND_ROW: f64 = 18.0;
const MAX_FRAMES: usize = 6;

fn stroke(i: usize) -> (&'static str, &'static str) {
    (PALETTE[i % PALETTE.len()], DASHES[(i / PALETTE.len()) % DASHES.len()])
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Affine map from a data box onto a square panel, aspect preserved.
/// A zero-extent box is widened to unit size around its centre.
struct View {
    cx: f64,
    cy: f64,
    scale: f64,
}

impl View {
    fn fit(points: impl Iterator<Item = (f64, f64)>, size: f64) -> View {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in points {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 0.0, 0.0, 0.0);
        }
        let span = (x1 - x0).max(y1 - y0);
        let span = if span > 1e-9 { span } else { 1.0 };
        View {
            cx: 0.5 * (x0 + x1),
            cy: 0.5 * (y0 + y1),
            scale: size / span,
        }
    }

    /// Panel coordinates with y pointing up.
    fn map(&self, x: f64, y: f64, ox: f64, oy: f64) -> (f64, f64) {
        (ox + PANEL / 2.0 + (x - self.cx) * self.scale, oy + PANEL / 2.0 - (y - self.cy) * self.scale)
    }
}

fn polyline(svg: &mut String, pts: &[(f64, f64)], color: &str, dash: &str) {
    let distinct = pts.windows(2).any(|w| (w[0].0 - w[1].0).abs() > 1e-3 || (w[0].1 - w[1].1).abs() > 1e-3);
    if !distinct {
        let (x, y) = pts[0];
        let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.00" fill="{color}"/>"#);
        return;
    }
    let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(
        svg,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.20" stroke-dasharray="{dash}"/>"#,
        coords.join(" ")
    );
}

fn sampled_frames(t: usize) -> Vec<usize> {
    let n = t.min(MAX_FRAMES);
    if n == 1 {
        return vec![0];
    }
    (0..n).map(|i| i * (t - 1) / (n - 1)).collect()
}

/// Renders `series` (label, motion) into one SVG document.
pub fn render_svg(series: &[(String, MotionSequence)], mode: PlotMode) -> String {
    let longest = series.iter().map(|(_, m)| m.len()).max().unwrap_or(1);
    let frames = sampled_frames(longest);
    let panels = match mode {
        PlotMode::Trajectory => 1,
        PlotMode::SkeletonFrames => frames.len(),
    };
    let width = 2.0 * MARGIN + panels as f64 * PANEL;
    let legend_h = LEGEND_ROW * series.len() as f64 + 10.0;
    let height = 2.0 * MARGIN + PANEL + legend_h;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let coord = |m: &MotionSequence, t: usize, j: usize| -> (f64, f64) {
        let p = m.joint(t, j);
        match mode {
            PlotMode::Trajectory => (p[0] as f64, p[2] as f64),
            PlotMode::SkeletonFrames => (p[0] as f64, p[1] as f64),
        }
    };
    let all = series.iter().flat_map(|(_, m)| {
        (0..m.len()).flat_map(move |t| (0..m.joint_count()).map(move |j| coord(m, t, j)))
    });
    let view = View::fit(all, PANEL - 20.0);
    match mode {
        PlotMode::Trajectory => {
            let _ = writeln!(svg, r#"<g class="trajectories">"#);
            for (i, (_, m)) in series.iter().enumerate() {
                let (color, dash) = stroke(i);
                for j in 0..m.joint_count() {
                    let pts: Vec<(f64, f64)> = (0..m.len())
                        .map(|t| {
                            let (x, y) = coord(m, t, j);
                            view.map(x, y, MARGIN, MARGIN)
                        })
                        .collect();
                    polyline(&mut svg, &pts, color, dash);
                }
            }
            let _ = writeln!(svg, "</g>");
        }
        PlotMode::SkeletonFrames => {
            let _ = writeln!(svg, r#"<g class="skeletons">"#);
            for (p, &f) in frames.iter().enumerate() {
                let ox = MARGIN + p as f64 * PANEL;
                let _ = writeln!(
                    svg,
                    r##"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" fill="#444444">frame {f}</text>"##,
                    ox + 4.0,
                    MARGIN - 8.0
                );
                for (i, (_, m)) in series.iter().enumerate() {
                    let (color, dash) = stroke(i);
                    let t = f.min(m.len() - 1);
                    let pts: Vec<(f64, f64)> = (0..m.joint_count())
                        .map(|j| {
                            let (x, y) = coord(m, t, j);
                            view.map(x, y, ox, MARGIN)
                        })
                        .collect();
                    polyline(&mut svg, &pts, color, dash);
                    for (x, y) in &pts {
                        let _ = writeln!(svg, r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.80" fill="{color}"/>"#);
                    }
                }
            }
            let _ = writeln!(svg, "</g>");
        }
    }
    let _ = writeln!(svg, r#"<g class="legend">"#);
    for (i, (label, _)) in series.iter().enumerate() {
        let (color, dash) = stroke(i);
        let y = MARGIN + PANEL + 14.0 + i as f64 * LEGEND_ROW;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2.00" stroke-dasharray="{dash}"/>"#,
            MARGIN,
            MARGIN + 24.0
        );
        let _ = writeln!(
            svg,
            r##"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" fill="#000000">{}</text>"##,
            MARGIN + 30.0,
            y + 4.0,
            escape(label)
        );
    }
    let _ = writeln!(svg, "</g>");
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use reactionmamba_core::numerics::Tensor;

    fn seq(t: usize, f: impl Fn(usize) -> f32) -> MotionSequence {
        MotionSequence::new(Tensor::new(&[t, 6], (0..6 * t).map(f).collect()).unwrap(), 2, 20, "sk").unwrap()
    }

    #[test]
    fn static_sequence_renders_points() {
        let s = render_svg(&[("still".into(), seq(10, |i| (i % 6) as f32))], PlotMode::Trajectory);
        assert!(s.contains("<circle") && !s.contains("<polyline"));
    }

    #[test]
    fn legend_escapes_labels() {
        let s = render_svg(&[("a<b".into(), seq(3, |i| i as f32))], PlotMode::SkeletonFrames);
        assert!(s.contains("a&lt;b"));
        assert_eq!(s.matches("frame ").count(), 3);
    }

    #[test]
    fn frame_sampling_covers_ends() {
        assert_eq!(sampled_frames(1), vec![0]);
        assert_eq!(sampled_frames(20), vec![0, 3, 7, 11, 15, 19]);
    }
}
