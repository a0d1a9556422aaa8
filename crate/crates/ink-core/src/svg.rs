//! SVG rendering of ink samples: one polyline per pen-down run.

use crate::data::InkSample;

const MARGIN_FRACTION: f64 = 0.05;
const STROKE_WIDTH: f64 = 2.0;

/// Render a sample as an SVG 1.1 document. A `pen = 1` point is the last
/// vertex of its polyline; the next point starts a new one. The viewBox fits
/// the data with a 5% margin per axis. Output text is deterministic.
pub fn render_svg(sample: &InkSample) -> String {
    let polylines = split_polylines(sample);

    let mut min = [f64::INFINITY, f64::INFINITY];
    let mut max = [f64::NEG_INFINITY, f64::NEG_INFINITY];
    for p in &sample.points {
        min[0] = min[0].min(p.u);
        min[1] = min[1].min(p.v);
        max[0] = max[0].max(p.u);
        max[1] = max[1].max(p.v);
    }

    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    if sample.points.is_empty() {
        out.push_str(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" viewBox=\"0 0 1 1\"/>\n",
        );
        return out;
    }

    let pad = |lo: f64, hi: f64| {
        let extent = hi - lo;
        if extent > 0.0 { extent * MARGIN_FRACTION } else { 1.0 }
    };
    let (px, py) = (pad(min[0], max[0]), pad(min[1], max[1]));
    let view = [
        min[0] - px,
        min[1] - py,
        (max[0] - min[0]) + 2.0 * px,
        (max[1] - min[1]) + 2.0 * py,
    ];

    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" viewBox=\"{} {} {} {}\">\n",
        view[0], view[1], view[2], view[3]
    ));
    for line in &polylines {
        out.push_str("  <polyline fill=\"none\" stroke=\"black\" stroke-width=\"");
        out.push_str(&format!("{STROKE_WIDTH}"));
        out.push_str("\" points=\"");
        for (i, &(u, v)) in line.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(&format!("{u},{v}"));
        }
        out.push_str("\"/>\n");
    }
    out.push_str("</svg>\n");
    out
}

fn split_polylines(sample: &InkSample) -> Vec<Vec<(f64, f64)>> {
    let mut lines = Vec::new();
    let mut current = Vec::new();
    for p in &sample.points {
        current.push((p.u, p.v));
        if p.pen == 1 {
            lines.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        lines.push(current);
    }
    lines
}
