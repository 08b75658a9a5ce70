//! SVG overlays of trajectories with a legend and per-curve objective.

use std::fmt::Write as _;

use anyhow::{bail, Result};
use pgo_core::PoseGraph;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const MARGIN: f64 = 40.0;
const LEGEND_WIDTH: f64 = 220.0;
const COLORS: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];

#[derive(Clone, Debug)]
pub struct Curve {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Objective of the estimate, shown in the legend when known.
    pub objective: Option<f64>,
}

impl Curve {
    /// Node positions of the graph's current estimate, in node order.
    pub fn from_graph(label: &str, graph: &PoseGraph) -> Self {
        let state = graph.estimate();
        Self {
            label: label.to_string(),
            points: state.translations.iter().map(|t| (t.x, t.y)).collect(),
            objective: graph.objective(&state).ok(),
        }
    }
}

/// World-to-plot transform shared by all curves: uniform scale, y up.
#[derive(Clone, Copy, Debug)]
pub struct Frame {
    scale: f64,
    min_x: f64,
    max_y: f64,
}

impl Frame {
    pub fn fit(curves: &[Curve]) -> Result<Self> {
        let pts = curves.iter().flat_map(|c| c.points.iter());
        let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        let mut any = false;
        for &(x, y) in pts {
            if !(x.is_finite() && y.is_finite()) {
                bail!("non-finite coordinate in trajectory");
            }
            lo_x = lo_x.min(x);
            hi_x = hi_x.max(x);
            lo_y = lo_y.min(y);
            hi_y = hi_y.max(y);
            any = true;
        }
        if !any {
            bail!("nothing to plot");
        }
        let span = (hi_x - lo_x).max(hi_y - lo_y).max(1e-9);
        let avail = (WIDTH - LEGEND_WIDTH - 2.0 * MARGIN).min(HEIGHT - 2.0 * MARGIN);
        Ok(Self {
            scale: avail / span,
            min_x: lo_x,
            max_y: hi_y,
        })
    }

    pub fn map(&self, (x, y): (f64, f64)) -> (f64, f64) {
        (MARGIN + (x - self.min_x) * self.scale, MARGIN + (self.max_y - y) * self.scale)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn render_svg(curves: &[Curve]) -> Result<String> {
    if curves.is_empty() {
        bail!("no trajectories given");
    }
    let frame = Frame::fit(curves)?;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )?;
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
    for (k, c) in curves.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = c
            .points
            .iter()
            .map(|&p| {
                let (x, y) = frame.map(p);
                format!("{x:.6},{y:.6}")
            })
            .collect();
        writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#,
            pts.join(" "),
            escape(&c.label)
        )?;
        let ly = MARGIN + 20.0 * k as f64;
        let lx = WIDTH - LEGEND_WIDTH + 10.0;
        let text = match c.objective {
            Some(f) => format!("{} (F = {f:.3e})", c.label),
            None => c.label.clone(),
        };
        writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#,
            lx + 20.0
        )?;
        writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(&text)
        )?;
    }
    writeln!(s, "</svg>")?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_polyline_per_curve() {
        let c = Curve {
            label: "a<b".into(),
            points: vec![(0.0, 0.0), (1.0, 2.0)],
            objective: Some(1.5),
        };
        let svg = render_svg(std::slice::from_ref(&c)).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert!(svg.contains("a&lt;b (F = 1.500e0)"));
        assert_eq!(render_svg(&[c.clone(), c]).unwrap().matches("<polyline").count(), 2);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(render_svg(&[]).is_err());
        let empty = Curve {
            label: "x".into(),
            points: vec![],
            objective: None,
        };
        assert!(render_svg(&[empty]).is_err());
    }

    #[test]
    fn frame_keeps_aspect_and_flips_y() {
        let c = Curve {
            label: "x".into(),
            points: vec![(0.0, 0.0), (2.0, 1.0)],
            objective: None,
        };
        let f = Frame::fit(&[c]).unwrap();
        let (x0, y0) = f.map((0.0, 0.0));
        let (x1, y1) = f.map((2.0, 1.0));
        assert!(x1 > x0 && y1 < y0);
        assert!(((x1 - x0) - 2.0 * (y0 - y1)).abs() < 1e-9);
    }
}
