//! Chord-diagram layout of importance tables and its SVG rendering.
//!
//! Angles are in degrees, measured clockwise from the top of the circle.
//! Nodes follow the schema's factor order with a factor's items before its
//! overall item. Each node's arc is proportional to its total incident
//! weight, and the arc is tiled by one sub-arc per incident ribbon end.

mod svg;

pub use svg::{render_svg, LabelMode, Style};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::importance::ImportanceTable;
use crate::schema::ConstructSchema;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutOptions {
    /// Gap after a node whose clockwise neighbour is in the same factor.
    pub gap_deg: f64,
    /// Gap between factor families, including the wrap-around gap.
    pub group_gap_deg: f64,
    /// Ribbons lighter than this are not drawn but keep their arc share.
    pub min_render_weight: f64,
    pub start_angle_deg: f64,
    /// Allowed deviation of each target's weights from 100.
    pub sum_tolerance: f64,
    /// Radius ratio at which a ribbon leaves its source arc.
    pub source_inset: f64,
    pub radius: f64,
    pub center: [f64; 2],
}

impl Default for LayoutOptions {
    fn default() -> Self {
        LayoutOptions {
            gap_deg: 1.0,
            group_gap_deg: 4.0,
            min_render_weight: 0.5,
            start_angle_deg: 0.0,
            sum_tolerance: crate::importance::SUM_TOLERANCE,
            source_inset: 0.96,
            radius: 300.0,
            center: [400.0, 400.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChordNode {
    pub code: String,
    /// Factor display name for factor codes, the code itself for items.
    pub label: String,
    pub family: String,
    pub color: String,
    pub arc_start: f64,
    pub arc_end: f64,
    /// Total incident weight.
    pub mass: f64,
}

impl ChordNode {
    pub fn span(&self) -> f64 {
        self.arc_end - self.arc_start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ribbon {
    /// Node indices.
    pub source: usize,
    pub target: usize,
    /// `[start, end]` degrees within the source node's arc.
    pub source_arc: [f64; 2],
    pub target_arc: [f64; 2],
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChordLayout {
    pub radius: f64,
    pub center: [f64; 2],
    pub source_inset: f64,
    pub gap_deg: f64,
    pub group_gap_deg: f64,
    pub nodes: Vec<ChordNode>,
    /// Ribbons to draw, in table row order.
    pub ribbons: Vec<Ribbon>,
    /// Ribbons below the render threshold; they still occupy arc space.
    pub suppressed: Vec<Ribbon>,
}

impl ChordLayout {
    pub fn node(&self, code: &str) -> Option<&ChordNode> {
        self.nodes.iter().find(|n| n.code == code)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// All ribbon ends incident to node `i`, drawn or not, as arc spans.
    pub fn incident_spans(&self, i: usize) -> Vec<f64> {
        self.ribbons
            .iter()
            .chain(&self.suppressed)
            .flat_map(|r| {
                let mut v = Vec::new();
                if r.source == i {
                    v.push(r.source_arc[1] - r.source_arc[0]);
                }
                if r.target == i {
                    v.push(r.target_arc[1] - r.target_arc[0]);
                }
                v
            })
            .collect()
    }
}

/// Sort key placing `code` in schema order.
fn order_key(schema: &ConstructSchema, code: &str) -> Result<(usize, usize)> {
    let (fi, f) = schema
        .factors
        .iter()
        .enumerate()
        .find(|(_, f)| f.code == code || f.overall_item == code || f.item_codes.iter().any(|c| c == code))
        .ok_or_else(|| Error::Layout(format!("`{code}` is not in the schema")))?;
    let pos = if let Some(p) = f.item_codes.iter().position(|c| c == code) {
        p
    } else if f.overall_item == code {
        f.item_codes.len()
    } else {
        f.item_codes.len() + 1
    };
    Ok((fi, pos))
}

pub fn layout(
    table: &ImportanceTable,
    schema: &ConstructSchema,
    opts: &LayoutOptions,
) -> Result<ChordLayout> {
    table.validate(opts.sum_tolerance)?;
    let bad = |x: f64| !x.is_finite() || x < 0.0;
    if bad(opts.gap_deg) || bad(opts.group_gap_deg) || bad(opts.min_render_weight) {
        return Err(Error::Layout("gaps and render threshold must be finite and non-negative".into()));
    }
    if !(opts.radius > 0.0) || !(opts.source_inset > 0.0 && opts.source_inset <= 1.0) {
        return Err(Error::Layout("radius must be positive and source_inset in (0, 1]".into()));
    }
    let rows: Vec<_> = table.rows().iter().filter(|r| r.weight > 0.0).collect();
    if rows.is_empty() {
        return Err(Error::Layout("table has no positive weights".into()));
    }

    let mut mass: BTreeMap<&str, f64> = BTreeMap::new();
    for r in &rows {
        *mass.entry(&r.predictor).or_insert(0.0) += r.weight;
        *mass.entry(&r.target).or_insert(0.0) += r.weight;
    }
    let mut codes: Vec<(&str, (usize, usize))> = mass
        .keys()
        .map(|c| Ok((*c, order_key(schema, c)?)))
        .collect::<Result<_>>()?;
    codes.sort_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(b.0)));
    let n = codes.len();
    let index: BTreeMap<&str, usize> = codes.iter().enumerate().map(|(i, (c, _))| (*c, i)).collect();

    let gaps: Vec<f64> = (0..n)
        .map(|i| {
            if codes[i].1 .0 == codes[(i + 1) % n].1 .0 {
                opts.gap_deg
            } else {
                opts.group_gap_deg
            }
        })
        .collect();
    let total_gap: f64 = gaps.iter().sum();
    if total_gap >= 360.0 {
        return Err(Error::Layout(format!("gaps take {total_gap} of 360 degrees")));
    }
    let total_mass: f64 = mass.values().sum();
    let scale = (360.0 - total_gap) / total_mass;

    let mut nodes = Vec::with_capacity(n);
    let mut cursor = opts.start_angle_deg;
    for (i, (code, (fi, _))) in codes.iter().enumerate() {
        let factor = &schema.factors[*fi];
        let m = mass[code];
        let span = m * scale;
        nodes.push(ChordNode {
            code: code.to_string(),
            label: if *code == factor.code { factor.display_name.clone() } else { code.to_string() },
            family: factor.code.clone(),
            color: factor.color.clone(),
            arc_start: cursor,
            arc_end: cursor + span,
            mass: m,
        });
        cursor += span + gaps[i];
    }

    // Ribbon ends per node, ordered so that ends toward counter-clockwise
    // peers come first; this keeps ribbons at a node from crossing.
    let mut ends: Vec<Vec<(usize, u8, usize)>> = vec![Vec::new(); n];
    for (k, r) in rows.iter().enumerate() {
        let (s, t) = (index[r.predictor.as_str()], index[r.target.as_str()]);
        ends[s].push(((t + n - s) % n, 0, k));
        ends[t].push(((s + n - t) % n, 1, k));
    }
    let mut source_arc = vec![[0.0; 2]; rows.len()];
    let mut target_arc = vec![[0.0; 2]; rows.len()];
    for (i, list) in ends.iter_mut().enumerate() {
        list.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let node = &nodes[i];
        let mut at = node.arc_start;
        for (j, &(_, role, k)) in list.iter().enumerate() {
            let end = if j + 1 == list.len() { node.arc_end } else { at + rows[k].weight * scale };
            let arc = [at, end];
            if role == 0 {
                source_arc[k] = arc;
            } else {
                target_arc[k] = arc;
            }
            at = end;
        }
    }

    let (mut ribbons, mut suppressed) = (Vec::new(), Vec::new());
    for (k, r) in rows.iter().enumerate() {
        let ribbon = Ribbon {
            source: index[r.predictor.as_str()],
            target: index[r.target.as_str()],
            source_arc: source_arc[k],
            target_arc: target_arc[k],
            weight: r.weight,
        };
        if r.weight < opts.min_render_weight {
            suppressed.push(ribbon);
        } else {
            ribbons.push(ribbon);
        }
    }
    Ok(ChordLayout {
        radius: opts.radius,
        center: opts.center,
        source_inset: opts.source_inset,
        gap_deg: opts.gap_deg,
        group_gap_deg: opts.group_gap_deg,
        nodes,
        ribbons,
        suppressed,
    })
}
