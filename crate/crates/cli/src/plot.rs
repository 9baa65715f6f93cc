//! SVG overlays and CSV tables.

use std::collections::BTreeMap;
use std::fmt::Write;

use netrack_core::{BoxDims, Region, Scene};

use crate::files::{ReportFile, TracksFile, TrainLogFile};

pub const CURVE_CSV_HEADER: &str = "recall_target,threshold,recall,motar,tp,fp,fn,ids";
pub const LOG_CSV_HEADER: &str = "epoch,train_loss,val_loss,val_motion,val_affinity,val_fpr";
pub const TRACKS_CSV_HEADER: &str = "k,id,px,py,vx,vy,existence,score,class";
pub const GT_CSV_HEADER: &str = "k,id,px,py,vx,vy,class";

const GT_COLOR: &str = "#1f77b4";
const EST_COLOR: &str = "#ff7f0e";
/// Longer side of the drawing in pixels.
const CANVAS: f64 = 800.0;

pub fn curve_csv(r: &ReportFile) -> String {
    let mut s = format!("{CURVE_CSV_HEADER}\n");
    for row in &r.curve {
        let t = row.threshold.map_or_else(String::new, |t| t.to_string());
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            row.recall_target, t, row.recall, row.motar, row.tp, row.fp, row.fn_, row.ids
        );
    }
    s
}

pub fn log_csv(l: &TrainLogFile) -> String {
    let mut s = format!("{LOG_CSV_HEADER}\n");
    for e in &l.epochs {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            e.epoch, e.train_loss, e.val_loss, e.val_motion, e.val_affinity, e.val_fpr
        );
    }
    s
}

pub fn tracks_csv(t: &TracksFile) -> String {
    let mut s = format!("{TRACKS_CSV_HEADER}\n");
    for f in &t.frames {
        for r in &f.tracks {
            let [px, py, vx, vy] = r.state;
            let _ = writeln!(
                s,
                "{},{},{px},{py},{vx},{vy},{},{},{}",
                f.k, r.id, r.existence, r.score, r.class
            );
        }
    }
    s
}

pub fn gt_csv(scene: &Scene) -> String {
    let mut s = format!("{GT_CSV_HEADER}\n");
    for f in &scene.frames {
        for g in &f.gt {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                f.k, g.id, g.state[0], g.state[1], g.state[2], g.state[3], g.class_id
            );
        }
    }
    s
}

/// World-to-pixel mapping with the y axis pointing up.
struct View {
    region: Region,
    scale: f64,
}

impl View {
    fn new(region: Region) -> Self {
        let w = (region.x_max - region.x_min).max(f64::EPSILON);
        let h = (region.y_max - region.y_min).max(f64::EPSILON);
        Self {
            region,
            scale: CANVAS / w.max(h),
        }
    }

    fn width(&self) -> f64 {
        (self.region.x_max - self.region.x_min) * self.scale
    }

    fn height(&self) -> f64 {
        (self.region.y_max - self.region.y_min) * self.scale
    }

    fn px(&self, p: [f64; 2]) -> (f64, f64) {
        (
            (p[0] - self.region.x_min) * self.scale,
            (self.region.y_max - p[1]) * self.scale,
        )
    }

    fn points(&self, pts: impl IntoIterator<Item = [f64; 2]>) -> String {
        pts.into_iter()
            .map(|p| {
                let (x, y) = self.px(p);
                format!("{x:.2},{y:.2}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn box_polygon(&self, bbox: &BoxDims, c: [f64; 2]) -> String {
        let pts = bbox.sample_points(c[0], c[1]);
        self.points(pts[..4].iter().copied())
    }
}

fn trajectories(
    s: &mut String,
    view: &View,
    paths: &BTreeMap<u64, Vec<[f64; 2]>>,
    color: &str,
    extra: &str,
) {
    for pts in paths.values().filter(|p| p.len() > 1) {
        let _ = writeln!(
            s,
            r#"  <polyline points="{}" fill="none" stroke="{color}" stroke-width="1"{extra}/>"#,
            view.points(pts.iter().copied())
        );
    }
}

/// Ground-truth boxes and trajectories with optional estimates on top.
/// Boxes are drawn for `frame` (default: the last frame).
pub fn overlay_svg(scene: &Scene, tracks: Option<&TracksFile>, frame: Option<usize>) -> String {
    let view = View::new(scene.config.region);
    let n_frames = scene.frames.len();
    let k = frame
        .unwrap_or(n_frames.saturating_sub(1))
        .min(n_frames.saturating_sub(1));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.2} {h:.2}">"#,
        w = view.width(),
        h = view.height()
    );
    s.push_str("  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");

    let mut gt_paths: BTreeMap<u64, Vec<[f64; 2]>> = BTreeMap::new();
    for f in scene.frames.iter().take(k + 1) {
        for g in &f.gt {
            gt_paths
                .entry(g.id)
                .or_default()
                .push([g.state[0], g.state[1]]);
        }
    }
    s.push_str("  <g id=\"ground-truth\">\n");
    trajectories(&mut s, &view, &gt_paths, GT_COLOR, "");
    if let Some(f) = scene.frames.get(k) {
        for g in &f.gt {
            let _ = writeln!(
                s,
                r#"  <polygon points="{}" fill="none" stroke="{GT_COLOR}" stroke-width="1.5"/>"#,
                view.box_polygon(&g.bbox, [g.state[0], g.state[1]])
            );
        }
    }
    s.push_str("  </g>\n");

    if let Some(t) = tracks {
        let mut est_paths: BTreeMap<u64, Vec<[f64; 2]>> = BTreeMap::new();
        for f in t.frames.iter().take(k + 1) {
            for r in &f.tracks {
                est_paths
                    .entry(r.id)
                    .or_default()
                    .push([r.state[0], r.state[1]]);
            }
        }
        s.push_str("  <g id=\"estimates\">\n");
        trajectories(
            &mut s,
            &view,
            &est_paths,
            EST_COLOR,
            r#" stroke-opacity="0.7""#,
        );
        if let Some(f) = t.frames.get(k) {
            for r in &f.tracks {
                let bbox = BoxDims {
                    length: r.bbox[0],
                    width: r.bbox[1],
                    yaw: r.bbox[2],
                };
                let c = [r.state[0], r.state[1]];
                let _ = writeln!(
                    s,
                    r#"  <polygon points="{}" fill="none" stroke="{EST_COLOR}" stroke-width="1.5" stroke-dasharray="6 4"/>"#,
                    view.box_polygon(&bbox, c)
                );
                let (x, y) = view.px(c);
                let _ = writeln!(
                    s,
                    r#"  <text x="{:.2}" y="{:.2}" font-size="10" fill="{EST_COLOR}">{}</text>"#,
                    x + 4.0,
                    y - 4.0,
                    r.id
                );
            }
        }
        s.push_str("  </g>\n");
    }
    let _ = writeln!(
        s,
        r#"  <text x="8" y="16" font-size="12" fill="black">frame {k}</text>"#
    );
    s.push_str("</svg>\n");
    s
}
