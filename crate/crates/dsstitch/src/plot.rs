//! Plain SVG rendering of 2D datasets, graphs and rollouts.
//!
//! Demonstrations are grey polylines with starts in red and goals in green.
//! Graph vertices are 1σ and 2σ covariance ellipses with a direction tick;
//! edges are arrows between means. Rollouts are drawn on top in blue.

use std::fmt::Write as _;

use dsstitch_core::{DemonstrationSet, GaussianComponent, GaussianGraph};

use crate::{AppError, AppResult};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 800.0;
const MARGIN: f64 = 40.0;

#[derive(Debug, Clone, Default)]
pub struct Scene<'a> {
    pub dataset: Option<&'a DemonstrationSet>,
    pub graph: Option<&'a GaussianGraph>,
    pub components: Vec<GaussianComponent>,
    pub rollouts: Vec<Vec<Vec<f64>>>,
}

struct Frame {
    lo: [f64; 2],
    scale: f64,
}

impl Frame {
    fn fit(points: &[[f64; 2]]) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points {
            for i in 0..2 {
                lo[i] = lo[i].min(p[i]);
                hi[i] = hi[i].max(p[i]);
            }
        }
        if !lo[0].is_finite() {
            lo = [0.0, 0.0];
            hi = [1.0, 1.0];
        }
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-9);
        let pad = 0.05 * span;
        Self {
            lo: [lo[0] - pad, lo[1] - pad],
            scale: (WIDTH - 2.0 * MARGIN).min(HEIGHT - 2.0 * MARGIN) / (span + 2.0 * pad),
        }
    }

    fn map(&self, p: &[f64]) -> (f64, f64) {
        (
            MARGIN + (p[0] - self.lo[0]) * self.scale,
            HEIGHT - MARGIN - (p[1] - self.lo[1]) * self.scale,
        )
    }
}

fn xy(p: &[f64]) -> [f64; 2] {
    [p[0], p[1]]
}

fn polyline(out: &mut String, frame: &Frame, points: &[&[f64]], style: &str) {
    if points.is_empty() {
        return;
    }
    let coords: Vec<String> = points
        .iter()
        .map(|p| {
            let (x, y) = frame.map(p);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let _ = writeln!(out, r#"<polyline points="{}" {style}/>"#, coords.join(" "));
}

fn dot(out: &mut String, frame: &Frame, p: &[f64], r: f64, fill: &str) {
    let (x, y) = frame.map(p);
    let _ = writeln!(
        out,
        r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{fill}"/>"#
    );
}

/// Semi-axes and rotation (degrees) of the `k`σ ellipse of a 2×2 covariance.
fn ellipse(c: &GaussianComponent, k: f64, frame: &Frame) -> (f64, f64, f64) {
    let s = c.covariance();
    let (a, b, d) = (s[(0, 0)], s[(0, 1)], s[(1, 1)]);
    let mid = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let l1 = (mid + rad).max(0.0);
    let l2 = (mid - rad).max(0.0);
    let theta = 0.5 * (2.0 * b).atan2(a - d);
    (
        k * l1.sqrt() * frame.scale,
        k * l2.sqrt() * frame.scale,
        -theta.to_degrees(),
    )
}

fn draw_component(out: &mut String, frame: &Frame, c: &GaussianComponent, color: &str) {
    let (x, y) = frame.map(c.mean());
    for (k, opacity) in [(1.0, 0.25), (2.0, 0.1)] {
        let (rx, ry, rot) = ellipse(c, k, frame);
        let _ = writeln!(
            out,
            r#"<ellipse cx="{x:.2}" cy="{y:.2}" rx="{rx:.2}" ry="{ry:.2}" transform="rotate({rot:.2} {x:.2} {y:.2})" fill="{color}" fill-opacity="{opacity}" stroke="{color}" stroke-width="0.8"/>"#
        );
    }
}

/// Renders `scene` as an SVG document. Only 2D data is supported.
pub fn render(scene: &Scene) -> AppResult<String> {
    let dims: Vec<usize> = scene
        .dataset
        .map(|s| s.dimension())
        .into_iter()
        .chain(
            scene
                .graph
                .and_then(|g| g.vertices().first().map(|v| v.mean().len())),
        )
        .chain(scene.components.iter().map(GaussianComponent::dim))
        .chain(
            scene
                .rollouts
                .iter()
                .filter_map(|r| r.first().map(Vec::len)),
        )
        .collect();
    if dims.iter().any(|&d| d != 2) {
        return Err(AppError::Usage("plotting supports d=2 only".into()));
    }

    let mut extent = Vec::new();
    if let Some(set) = scene.dataset {
        extent.extend(set.all_points().map(|p| xy(&p.position)));
    }
    if let Some(g) = scene.graph {
        extent.extend(g.vertices().iter().map(|v| xy(v.mean())));
    }
    extent.extend(scene.components.iter().map(|c| xy(c.mean())));
    for r in &scene.rollouts {
        extent.extend(r.iter().map(|p| xy(p)));
    }
    let frame = Frame::fit(&extent);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        out,
        r##"<defs><marker id="arrow" viewBox="0 0 10 10" refX="9" refY="5" markerWidth="6" markerHeight="6" orient="auto"><path d="M0,0 L10,5 L0,10 z" fill="#555"/></marker></defs>"##
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);

    if let Some(g) = scene.graph {
        out.push_str("<g id=\"gaussians\">\n");
        for v in g.vertices() {
            let color = if v.reversed { "#b07cc6" } else { "#4a90d9" };
            draw_component(&mut out, &frame, &v.component, color);
        }
        out.push_str("</g>\n<g id=\"edges\">\n");
        for (i, j, _) in g.edges() {
            let (x1, y1) = frame.map(g.vertices()[i].mean());
            let (x2, y2) = frame.map(g.vertices()[j].mean());
            let _ = writeln!(
                out,
                r##"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="#555" stroke-width="0.8" marker-end="url(#arrow)"/>"##
            );
        }
        out.push_str("</g>\n");
    }
    if !scene.components.is_empty() {
        out.push_str("<g id=\"components\">\n");
        for c in &scene.components {
            draw_component(&mut out, &frame, c, "#e69f00");
        }
        out.push_str("</g>\n");
    }
    if let Some(set) = scene.dataset {
        out.push_str("<g id=\"demonstrations\">\n");
        for demo in set.demonstrations() {
            for traj in &demo.trajectories {
                let pts: Vec<&[f64]> = traj.points.iter().map(|p| p.position.as_slice()).collect();
                polyline(
                    &mut out,
                    &frame,
                    &pts,
                    r##"fill="none" stroke="#888" stroke-width="1.2""##,
                );
                if let Some(s) = traj.start() {
                    dot(&mut out, &frame, s, 4.0, "red");
                }
                if let Some(e) = traj.end() {
                    dot(&mut out, &frame, e, 4.0, "green");
                }
            }
        }
        out.push_str("</g>\n");
    }
    if !scene.rollouts.is_empty() {
        out.push_str("<g id=\"rollouts\">\n");
        for r in &scene.rollouts {
            let pts: Vec<&[f64]> = r.iter().map(Vec::as_slice).collect();
            polyline(
                &mut out,
                &frame,
                &pts,
                r##"fill="none" stroke="#1f4fbf" stroke-width="2""##,
            );
            if let Some(s) = r.first() {
                dot(&mut out, &frame, s, 5.0, "red");
            }
            if let Some(e) = r.last() {
                dot(&mut out, &frame, e, 5.0, "green");
            }
        }
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    Ok(out)
}
