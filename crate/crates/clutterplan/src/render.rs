//! Deterministic top-down SVG rendering of scenes, selection overlays,
//! and executed paths.
//!
//! All coordinates are written with fixed precision so that identical
//! inputs always produce identical bytes.

use std::fmt::Write as _;

use crate::geometry::Point;
use crate::selection::SelectionTriangle;
use crate::world::{Configuration, ObjectKind, ObjectStatus, WorkspaceModel};

/// Pixels per meter.
const SCALE: f64 = 500.0;

fn px(v: f64) -> String {
    format!("{:.2}", v * SCALE)
}

/// Optional overlays drawn on top of the scene.
#[derive(Debug, Default)]
pub struct Overlays {
    pub triangles: Vec<SelectionTriangle>,
    /// Labeled waypoint sequences (one polyline each).
    pub paths: Vec<(String, Vec<Configuration>)>,
}

/// Renders the world (and overlays) as an SVG document string.
pub fn render_scene(world: &WorkspaceModel, overlays: &Overlays) -> String {
    let b = world.bounds();
    let mut s = String::new();
    let _ = write!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{} {} {} {}\">\n",
        px(b.x),
        px(b.y),
        px(b.w),
        px(b.h)
    );
    let _ = write!(
        s,
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#f5f0e8\"/>\n",
        px(b.x),
        px(b.y),
        px(b.w),
        px(b.h)
    );
    let t = &world.table;
    let _ = write!(
        s,
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#d9c9a3\" stroke=\"#6b5b3e\" stroke-width=\"2\"/>\n",
        px(t.x),
        px(t.y),
        px(t.w),
        px(t.h)
    );
    for sr in &world.safe_regions {
        let _ = write!(
            s,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#cfe8cf\" stroke=\"#3e6b3e\" stroke-width=\"1\" fill-opacity=\"0.7\"/>\n",
            px(sr.rect.x),
            px(sr.rect.y),
            px(sr.rect.w),
            px(sr.rect.h)
        );
    }
    for tri in &overlays.triangles {
        let pts: Vec<String> = tri
            .vertices
            .iter()
            .map(|p| format!("{},{}", px(p.x), px(p.y)))
            .collect();
        let _ = write!(
            s,
            "<polygon points=\"{}\" fill=\"#ffcc66\" fill-opacity=\"0.4\" stroke=\"#b38600\" stroke-width=\"1\"/>\n",
            pts.join(" ")
        );
    }
    for o in &world.objects {
        if o.status == ObjectStatus::Retrieved {
            continue;
        }
        let selected = overlays
            .triangles
            .iter()
            .any(|tri| tri.selected.contains(&o.id));
        let fill = match (o.kind, selected) {
            (ObjectKind::Target, _) => "#cc3333",
            (ObjectKind::Clutter, true) => "#e6a23c",
            (ObjectKind::Clutter, false) => "#8899aa",
        };
        let _ = write!(
            s,
            "<circle cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"{}\" stroke=\"#333333\" stroke-width=\"1\"/>\n",
            px(o.center.x),
            px(o.center.y),
            px(o.radius),
            fill
        );
        let _ = write!(
            s,
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\">{}</text>\n",
            px(o.center.x),
            px(o.center.y - o.radius - 0.01),
            o.id
        );
    }
    for r in &world.robots {
        let _ = write!(
            s,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#4466cc\" stroke=\"#222244\" stroke-width=\"1\"/>\n",
            px(r.base.x - 0.03),
            px(r.base.y - 0.03),
            px(0.06),
            px(0.06)
        );
        let _ = write!(
            s,
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\">{}</text>\n",
            px(r.base.x),
            px(r.base.y - 0.04),
            r.id
        );
    }
    for (label, path) in &overlays.paths {
        if path.len() < 2 {
            continue;
        }
        let pts: Vec<String> = path
            .iter()
            .map(|c| format!("{},{}", px(c.x), px(c.y)))
            .collect();
        let _ = write!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"#333399\" stroke-width=\"1.5\" stroke-dasharray=\"4 2\"/>\n",
            pts.join(" ")
        );
        let start: Point = path[0].position();
        let _ = write!(
            s,
            "<text x=\"{}\" y=\"{}\" font-size=\"9\">{}</text>\n",
            px(start.x),
            px(start.y),
            label
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Renders and writes the scene to a file.
pub fn render_to_file(
    world: &WorkspaceModel,
    overlays: &Overlays,
    path: &std::path::Path,
) -> std::io::Result<()> {
    std::fs::write(path, render_scene(world, overlays))
}
