//! Plain SVG overlays of vector maps in BEV pixel space.

use std::fmt::Write as _;

use crate::map::{MapClass, VectorMap};

fn color(class: MapClass) -> &'static str {
    match class {
        MapClass::Divider => "#d62728",
        MapClass::PedCrossing => "#1f77b4",
        MapClass::Boundary => "#2ca02c",
    }
}

/// Draws `layers` on one canvas. Ego +x points up the page and +y to the
/// left, so the picture matches a driver's view from above. Each layer is a
/// map plus a stroke style (`true` for dashed).
pub fn render_svg(layers: &[(&VectorMap, bool)], scale: f64) -> String {
    let mut out = String::new();
    let Some((first, _)) = layers.first() else {
        return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"0\" height=\"0\"/>\n".into();
    };
    let b = first.bev;
    let w = (b.y_max - b.y_min) * scale;
    let h = (b.x_max - b.x_min) * scale;
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.1}\" height=\"{h:.1}\" viewBox=\"0 0 {w:.1} {h:.1}\">"
    );
    let _ = writeln!(out, "<rect width=\"{w:.1}\" height=\"{h:.1}\" fill=\"#ffffff\"/>");
    for (vm, dashed) in layers {
        for e in &vm.elements {
            let pts: Vec<String> = e
                .points
                .iter()
                .map(|p| format!("{:.2},{:.2}", (b.y_max - p[1]) * scale, (b.x_max - p[0]) * scale))
                .collect();
            let _ = writeln!(
                out,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"2\"{} opacity=\"{:.2}\"/>",
                pts.join(" "),
                color(e.class),
                if *dashed { " stroke-dasharray=\"4 3\"" } else { "" },
                e.confidence.clamp(0.2, 1.0)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}
