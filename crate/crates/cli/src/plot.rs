//! SVG rendering of predicted vs truth trajectories in two projections.

use std::fmt::Write as _;
use std::path::Path;

use uavfuse::postprocess::Trajectory;
use uavfuse::Point3;

const PANEL: f64 = 400.0;
const MARGIN: f64 = 40.0;
const PRED_COLOR: &str = "#d62728";
const TRUTH_COLOR: &str = "#1f77b4";

/// Coordinate pair of a projection.
type Axes = (fn(&Point3) -> f64, fn(&Point3) -> f64, &'static str, &'static str);

const PROJECTIONS: [Axes; 2] = [(|p| p.x, |p| p.y, "x (m)", "y (m)"), (|p| p.x, |p| p.z, "x (m)", "z (m)")];

struct Bounds {
    lo: (f64, f64),
    span: f64,
}

impl Bounds {
    /// Equal-aspect bounds covering every point.
    fn of(points: impl Iterator<Item = (f64, f64)>) -> Self {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (x, y) in points {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            return Self { lo: (0.0, 0.0), span: 1.0 };
        }
        let span = (x1 - x0).max(y1 - y0).max(1e-6) * 1.05;
        Self {
            lo: ((x0 + x1 - span) / 2.0, (y0 + y1 - span) / 2.0),
            span,
        }
    }

    fn map(&self, (x, y): (f64, f64), offset_x: f64) -> (f64, f64) {
        let px = offset_x + MARGIN + (x - self.lo.0) / self.span * PANEL;
        let py = MARGIN + PANEL - (y - self.lo.1) / self.span * PANEL;
        (px, py)
    }
}

fn polyline(svg: &mut String, pts: &[(f64, f64)], color: &str) {
    let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(
        svg,
        r#"  <polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
        coords.join(" ")
    );
}

pub fn render_svg(pred: &Trajectory, truth: &Trajectory) -> String {
    let width = 2.0 * (PANEL + 2.0 * MARGIN);
    let height = PANEL + 2.0 * MARGIN + 30.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"  <rect width="100%" height="100%" fill="white"/>"#);
    for (k, (fx, fy, xl, yl)) in PROJECTIONS.iter().enumerate() {
        let offset = k as f64 * (PANEL + 2.0 * MARGIN);
        let project = |p: &Point3| (fx(p), fy(p));
        let bounds = Bounds::of(pred.positions.iter().chain(&truth.positions).map(project));
        let _ = writeln!(
            svg,
            r##"  <rect x="{}" y="{MARGIN}" width="{PANEL}" height="{PANEL}" fill="none" stroke="#888"/>"##,
            offset + MARGIN
        );
        let _ = writeln!(
            svg,
            r#"  <text x="{}" y="{}" text-anchor="middle">{xl}</text>"#,
            offset + MARGIN + PANEL / 2.0,
            MARGIN + PANEL + 20.0
        );
        let _ = writeln!(
            svg,
            r#"  <text x="{}" y="{}" text-anchor="middle" transform="rotate(-90 {} {})">{yl}</text>"#,
            offset + MARGIN - 12.0,
            MARGIN + PANEL / 2.0,
            offset + MARGIN - 12.0,
            MARGIN + PANEL / 2.0
        );
        for (traj, color) in [(truth, TRUTH_COLOR), (pred, PRED_COLOR)] {
            let pts: Vec<(f64, f64)> = traj.positions.iter().map(|p| bounds.map(project(p), offset)).collect();
            polyline(&mut svg, &pts, color);
        }
    }
    let legend_y = height - 10.0;
    let _ = writeln!(svg, r#"  <text x="{MARGIN}" y="{legend_y}" fill="{TRUTH_COLOR}">truth</text>"#);
    let _ = writeln!(svg, r#"  <text x="{}" y="{legend_y}" fill="{PRED_COLOR}">prediction</text>"#, MARGIN + 50.0);
    svg.push_str("</svg>\n");
    svg
}

/// `t_ns,pred_x,pred_y,pred_z,truth_x,truth_y,truth_z`.
pub fn write_csv(path: &Path, pred: &Trajectory, truth: &Trajectory) -> std::io::Result<()> {
    let mut out = String::from("t_ns,pred_x,pred_y,pred_z,truth_x,truth_y,truth_z\n");
    for ((t, p), q) in pred.t_ns.iter().zip(&pred.positions).zip(&truth.positions) {
        let _ = writeln!(out, "{t},{},{},{},{},{},{}", p.x, p.y, p.z, q.x, q.y, q.z);
    }
    std::fs::write(path, out)
}
