use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ChordLayout, Ribbon};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    Code,
    Name,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Style {
    /// Family code to fill color; families not listed keep the schema color.
    pub palette: BTreeMap<String, String>,
    pub font_family: String,
    pub font_size: f64,
    pub size_px: f64,
    pub label_mode: LabelMode,
    pub ribbon_opacity: f64,
    /// Radial thickness of node arcs.
    pub arc_width: f64,
}

impl Default for Style {
    fn default() -> Self {
        Style {
            palette: BTreeMap::new(),
            font_family: "Helvetica, Arial, sans-serif".into(),
            font_size: 12.0,
            size_px: 800.0,
            label_mode: LabelMode::Code,
            ribbon_opacity: 0.65,
            arc_width: 18.0,
        }
    }
}

/// Fixed three-decimal formatting so output bytes are reproducible.
fn f(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

struct Geometry {
    cx: f64,
    cy: f64,
}

impl Geometry {
    fn point(&self, deg: f64, r: f64) -> (f64, f64) {
        let a = deg.to_radians();
        (self.cx + r * a.sin(), self.cy - r * a.cos())
    }

    fn pt(&self, deg: f64, r: f64) -> String {
        let (x, y) = self.point(deg, r);
        format!("{} {}", f(x), f(y))
    }

    /// Clockwise arc command from the current point to `to` degrees.
    fn arc_to(&self, from: f64, to: f64, r: f64, clockwise: bool) -> String {
        let large = u8::from((to - from).abs() > 180.0);
        let sweep = u8::from(clockwise);
        format!("A {} {} 0 {large} {sweep} {}", f(r), f(r), self.pt(to, r))
    }
}

fn ribbon_path(g: &Geometry, r: &Ribbon, radius: f64, inset: f64) -> String {
    let rs = radius * inset;
    let [s0, s1] = r.source_arc;
    let [t0, t1] = r.target_arc;
    let c = format!("{} {}", f(g.cx), f(g.cy));
    format!(
        "M {} {} C {c} {c} {} {} C {c} {c} {} Z",
        g.pt(s0, rs),
        g.arc_to(s0, s1, rs, true),
        g.pt(t0, radius),
        g.arc_to(t0, t1, radius, true),
        g.pt(s0, rs),
    )
}

/// Standalone SVG: one `path` per node arc and per drawn ribbon, plus a
/// `text` label per node unless labels are off.
pub fn render_svg(l: &ChordLayout, style: &Style) -> String {
    let g = Geometry {
        cx: l.center[0],
        cy: l.center[1],
    };
    let color = |family: &str, default: &str| -> String {
        style.palette.get(family).cloned().unwrap_or_else(|| default.to_string())
    };
    let inner = l.radius;
    let outer = l.radius + style.arc_width;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{s}" height="{s}" viewBox="0 0 {s} {s}" font-family="{}" font-size="{}">"#,
        escape(&style.font_family),
        f(style.font_size),
        s = f(style.size_px),
    );
    out.push_str("<g class=\"ribbons\">\n");
    for r in &l.ribbons {
        let src = &l.nodes[r.source];
        let _ = writeln!(
            out,
            r#"<path d="{}" fill="{}" fill-opacity="{}" data-source="{}" data-target="{}" data-weight="{}"/>"#,
            ribbon_path(&g, r, inner, l.source_inset),
            escape(&color(&src.family, &src.color)),
            f(style.ribbon_opacity),
            escape(&src.code),
            escape(&l.nodes[r.target].code),
            f(r.weight),
        );
    }
    out.push_str("</g>\n<g class=\"arcs\">\n");
    for n in &l.nodes {
        let d = format!(
            "M {} {} L {} {} Z",
            g.pt(n.arc_start, outer),
            g.arc_to(n.arc_start, n.arc_end, outer, true),
            g.pt(n.arc_end, inner),
            g.arc_to(n.arc_end, n.arc_start, inner, false),
        );
        let _ = writeln!(
            out,
            r#"<path d="{d}" fill="{}" data-node="{}"/>"#,
            escape(&color(&n.family, &n.color)),
            escape(&n.code),
        );
    }
    out.push_str("</g>\n");
    if style.label_mode != LabelMode::None {
        out.push_str("<g class=\"labels\">\n");
        for n in &l.nodes {
            let text = match style.label_mode {
                LabelMode::Name => &n.label,
                _ => &n.code,
            };
            let mid = (n.arc_start + n.arc_end) / 2.0;
            let (x, y) = g.point(mid, outer + 6.0);
            let norm = mid.rem_euclid(360.0);
            let (rot, anchor) = if norm < 180.0 {
                (norm - 90.0, "start")
            } else {
                (norm + 90.0, "end")
            };
            let _ = writeln!(
                out,
                r#"<text x="{x}" y="{y}" transform="rotate({} {x} {y})" text-anchor="{anchor}" dominant-baseline="middle">{}</text>"#,
                f(rot),
                escape(text),
                x = f(x),
                y = f(y),
            );
        }
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    out
}
