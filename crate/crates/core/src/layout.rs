//! Display geometry for one day's antichain: nested squarified treemaps with
//! tag clouds, the equivalent ordered list, color encodings and SVG output.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterHierarchy;
use crate::error::{Error, Result};
use crate::explore::{Antichain, AntichainEntry};

/// Stand-in weight for zero-size nodes, relative to the parent's size.
pub const DEGENERATE_WEIGHT: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub const UNIT: Rect = Rect {
        x: 0.0,
        y: 0.0,
        w: 1.0,
        h: 1.0,
    };

    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Longer side over shorter side; infinite for a degenerate rect.
    pub fn aspect(&self) -> f64 {
        let (lo, hi) = if self.w < self.h {
            (self.w, self.h)
        } else {
            (self.h, self.w)
        };
        if lo > 0.0 {
            hi / lo
        } else {
            f64::INFINITY
        }
    }

    /// Maps this rect into the unit square spanned by `frame`.
    pub fn normalized_in(&self, frame: &Rect) -> Rect {
        Rect {
            x: (self.x - frame.x) / frame.w,
            y: (self.y - frame.y) / frame.h,
            w: self.w / frame.w,
            h: self.h / frame.h,
        }
    }

    pub fn contains(&self, other: &Rect, tol: f64) -> bool {
        other.x >= self.x - tol
            && other.y >= self.y - tol
            && other.x + other.w <= self.x + self.w + tol
            && other.y + other.h <= self.y + self.h + tol
    }

    /// Area of the intersection of two rects.
    pub fn overlap(&self, other: &Rect) -> f64 {
        let w = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let h = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }
}

/// Squarified treemap of `weights` inside `rect`; output is in input order.
///
/// Weights are placed largest first. Each row is laid along the shorter side
/// of the space left over and grows while adding the next weight does not
/// worsen the row's largest aspect ratio.
pub fn squarify(weights: &[f64], rect: Rect) -> Result<Vec<Rect>> {
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::Invalid(format!(
            "treemap weights must be positive, got {w}"
        )));
    }
    if rect.area().is_nan() || rect.area() <= 0.0 {
        return Err(Error::Invalid(format!(
            "treemap rect has no area: {rect:?}"
        )));
    }
    if weights.is_empty() {
        return Ok(Vec::new());
    }

    let total: f64 = weights.iter().sum();
    let scale = rect.area() / total;
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]));

    let mut out = vec![Rect::default(); weights.len()];
    let mut free = rect;
    let mut row: Vec<usize> = Vec::new();
    let mut row_sum = 0.0;
    for (pos, &i) in order.iter().enumerate() {
        let area = weights[i] * scale;
        let side = free.w.min(free.h);
        if !row.is_empty() {
            let now = worst(row_sum, area_of(weights, scale, &row), side);
            let mut with = row.clone();
            with.push(i);
            if worst(row_sum + area, area_of(weights, scale, &with), side) > now {
                free = place_row(&row, weights, scale, row_sum, free, &mut out, false);
                row.clear();
                row_sum = 0.0;
            }
        }
        row.push(i);
        row_sum += area;
        if pos + 1 == order.len() {
            place_row(&row, weights, scale, row_sum, free, &mut out, true);
        }
    }
    Ok(out)
}

fn area_of(weights: &[f64], scale: f64, row: &[usize]) -> (f64, f64) {
    row.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &i| {
        let a = weights[i] * scale;
        (lo.min(a), hi.max(a))
    })
}

/// Largest aspect ratio in a row of total area `sum` along a side of length `side`.
fn worst(sum: f64, (min, max): (f64, f64), side: f64) -> f64 {
    let s2 = sum * sum;
    let w2 = side * side;
    (w2 * max / s2).max(s2 / (w2 * min))
}

/// Lays `row` along the shorter side of `free` and returns the space left.
/// The last row takes all remaining space so the tiling is exact.
fn place_row(
    row: &[usize],
    weights: &[f64],
    scale: f64,
    row_sum: f64,
    free: Rect,
    out: &mut [Rect],
    last: bool,
) -> Rect {
    let vertical = free.w >= free.h;
    let side = if vertical { free.h } else { free.w };
    let thickness = if last {
        if vertical {
            free.w
        } else {
            free.h
        }
    } else {
        row_sum / side
    };
    let mut offset = 0.0;
    for (k, &i) in row.iter().enumerate() {
        let length = if k + 1 == row.len() {
            side - offset
        } else {
            weights[i] * scale / row_sum * side
        };
        out[i] = if vertical {
            Rect::new(free.x, free.y + offset, thickness, length)
        } else {
            Rect::new(free.x + offset, free.y, length, thickness)
        };
        offset += length;
    }
    if vertical {
        Rect::new(free.x + thickness, free.y, free.w - thickness, free.h)
    } else {
        Rect::new(free.x, free.y + thickness, free.w, free.h - thickness)
    }
}

/// Position of one antichain node (or one ancestor frame) in the treemap.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRect {
    pub node_id: usize,
    pub rect: Rect,
    /// Set when the node (or an ancestor) had no users and got a token area.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TreemapGeometry {
    pub cells: Vec<CellRect>,
    /// Rects of the proper ancestors of antichain nodes, outermost first.
    pub frames: Vec<CellRect>,
}

/// Recursive treemap over subtree user counts, opened only at proper
/// ancestors of antichain members. Cells come out in depth-first order.
pub fn layout_hierarchy(
    hierarchy: &ClusterHierarchy,
    antichain: &Antichain,
    viewport: Rect,
) -> Result<TreemapGeometry> {
    let n = hierarchy.nodes.len();
    let mut member = vec![false; n];
    for e in &antichain.entries {
        *member.get_mut(e.node).ok_or_else(|| {
            Error::Invalid(format!("antichain node {} not in hierarchy", e.node))
        })? = true;
    }
    let mut ancestor = vec![false; n];
    for e in &antichain.entries {
        let mut at = hierarchy.nodes[e.node].parent;
        while let Some(p) = at {
            if ancestor[p] {
                break;
            }
            ancestor[p] = true;
            at = hierarchy.nodes[p].parent;
        }
    }

    let mut geometry = TreemapGeometry::default();
    let mut stack = vec![(hierarchy.root, viewport, false)];
    while let Some((id, rect, degenerate)) = stack.pop() {
        if member[id] {
            if ancestor[id] {
                return Err(Error::Invalid(format!(
                    "antichain nodes nest under node {id}"
                )));
            }
            geometry.cells.push(CellRect {
                node_id: id,
                rect,
                degenerate,
            });
            continue;
        }
        if !ancestor[id] {
            return Err(Error::Invalid(format!(
                "node {id} is not covered by the antichain"
            )));
        }
        geometry.frames.push(CellRect {
            node_id: id,
            rect,
            degenerate,
        });
        let node = &hierarchy.nodes[id];
        let unit = (node.size as f64).max(1.0) * DEGENERATE_WEIGHT;
        let weights: Vec<f64> = node
            .children
            .iter()
            .map(|&c| (hierarchy.nodes[c].size as f64).max(unit))
            .collect();
        let rects = squarify(&weights, rect)?;
        for (&c, r) in node.children.iter().zip(rects).rev() {
            stack.push((c, r, degenerate || hierarchy.nodes[c].size == 0));
        }
    }
    Ok(geometry)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HueClass {
    MatchYellow,
    PosTan,
    NegPurple,
    NeutralWhite,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Color {
    pub hue_class: HueClass,
    pub saturation: f64,
}

impl Color {
    pub const NEUTRAL: Color = Color {
        hue_class: HueClass::NeutralWhite,
        saturation: 0.0,
    };
}

/// Match modes: yellow, saturated by the score.
pub fn match_color(score: f64) -> Color {
    Color {
        hue_class: HueClass::MatchYellow,
        saturation: clamp_unit(score),
    }
}

/// Sentiment modes: tan above neutral, purple below, saturated by `|h|`
/// relative to `max_abs`.
pub fn sentiment_color(h: f64, max_abs: f64) -> Color {
    if h == 0.0 || !h.is_finite() {
        return Color::NEUTRAL;
    }
    let saturation = if max_abs > 0.0 {
        clamp_unit(h.abs() / max_abs)
    } else {
        1.0
    };
    let hue_class = if h > 0.0 {
        HueClass::PosTan
    } else {
        HueClass::NegPurple
    };
    Color {
        hue_class,
        saturation,
    }
}

fn clamp_unit(x: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(0.0, 1.0)
    }
}

/// Concrete rendering of the hue classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Palette {
    pub match_hue: f64,
    pub positive_hue: f64,
    pub negative_hue: f64,
    /// Lightness at saturation 0.
    pub light_max: f64,
    /// Lightness at saturation 1.
    pub light_min: f64,
}

impl Default for Palette {
    fn default() -> Self {
        Self {
            match_hue: 55.0,
            positive_hue: 38.0,
            negative_hue: 275.0,
            light_max: 0.9,
            light_min: 0.55,
        }
    }
}

impl Palette {
    pub fn css(&self, color: &Color) -> String {
        let hue = match color.hue_class {
            HueClass::NeutralWhite => return "#ffffff".to_string(),
            HueClass::MatchYellow => self.match_hue,
            HueClass::PosTan => self.positive_hue,
            HueClass::NegPurple => self.negative_hue,
        };
        let s = color.saturation;
        let l = self.light_max + (self.light_min - self.light_max) * s;
        format!("hsl({hue:.0},{:.1}%,{:.1}%)", s * 100.0, l * 100.0)
    }
}

/// Font metrics for tag clouds, in display units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TagCloudStyle {
    pub min_font: f64,
    pub max_font: f64,
    /// Average glyph advance as a fraction of the font size.
    pub char_width: f64,
    pub line_height: f64,
    pub padding: f64,
}

impl Default for TagCloudStyle {
    fn default() -> Self {
        Self {
            min_font: 9.0,
            max_font: 24.0,
            char_width: 0.6,
            line_height: 1.2,
            padding: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacedWord {
    pub term: String,
    pub weight: f64,
    pub font_size: f64,
    /// Top-left corner of the word box.
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TagLayout {
    pub words: Vec<PlacedWord>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub overflow: bool,
}

/// Flows up to `word_cap` tags, heaviest first, into `cell` with greedy line
/// wrapping. Font size is linear in the tag's dense weight rank. Layout stops
/// at the first word that does not fit.
pub fn tag_cloud(
    tags: &[(String, f64)],
    cell: Rect,
    word_cap: usize,
    style: &TagCloudStyle,
) -> TagLayout {
    let tags = &tags[..tags.len().min(word_cap)];
    let mut distinct: Vec<f64> = tags.iter().map(|t| t.1).collect();
    distinct.sort_by(|a, b| b.total_cmp(a));
    distinct.dedup();
    let font_of = |w: f64| {
        let rank = distinct.iter().position(|&d| d == w).unwrap_or(0);
        let t = if distinct.len() > 1 {
            1.0 - rank as f64 / (distinct.len() - 1) as f64
        } else {
            1.0
        };
        style.min_font + t * (style.max_font - style.min_font)
    };

    let left = cell.x + style.padding;
    let right = cell.x + cell.w - style.padding;
    let bottom = cell.y + cell.h - style.padding;
    let mut layout = TagLayout::default();
    let (mut x, mut line_top, mut line_h) = (left, cell.y + style.padding, 0.0f64);
    for (term, weight) in tags {
        let font = font_of(*weight);
        let w = term.chars().count() as f64 * style.char_width * font;
        let h = font * style.line_height;
        if x > left && x + w > right {
            line_top += line_h;
            x = left;
            line_h = 0.0;
        }
        if x + w > right || line_top + h > bottom {
            layout.overflow = true;
            break;
        }
        layout.words.push(PlacedWord {
            term: term.clone(),
            weight: *weight,
            font_size: font,
            x,
            y: line_top,
            w,
            h,
        });
        x += w + style.char_width * font;
        line_h = line_h.max(h);
    }
    layout
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    #[default]
    Treemap,
    List,
}

impl std::str::FromStr for View {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "treemap" => Ok(View::Treemap),
            "list" => Ok(View::List),
            other => Err(format!("unknown view `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreemapCell {
    pub node_id: usize,
    pub user_count: usize,
    /// Normalized to the unit square of the panel.
    pub rect: Rect,
    pub color: Color,
    pub fill: String,
    /// Word boxes normalized like `rect`; font sizes stay in display units.
    pub tag_layout: TagLayout,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ListItem {
    pub node_id: usize,
    pub user_count: usize,
    pub label: String,
    pub color: Color,
    pub fill: String,
    pub keywords: Vec<String>,
    pub score: f64,
}

/// Ordered list presentation of an antichain.
pub fn list_view(
    ordered: &[AntichainEntry],
    hierarchy: &ClusterHierarchy,
    word_cap: usize,
    color_of: impl Fn(usize, f64) -> Color,
    palette: &Palette,
) -> Vec<ListItem> {
    ordered
        .iter()
        .map(|e| {
            let node = &hierarchy.nodes[e.node];
            let color = color_of(e.node, e.score);
            ListItem {
                node_id: e.node,
                user_count: node.size,
                label: format!("U: {}", node.size),
                color,
                fill: palette.css(&color),
                keywords: node
                    .tags
                    .iter()
                    .take(word_cap)
                    .map(|t| t.0.clone())
                    .collect(),
                score: e.score,
            }
        })
        .collect()
}

/// Scene rendering parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneStyle {
    /// Panel size in display units; tag clouds are fitted at this size.
    pub width: f64,
    pub height: f64,
    pub tags: TagCloudStyle,
    pub palette: Palette,
    pub ancestor_frames: bool,
}

impl Default for SceneStyle {
    fn default() -> Self {
        Self {
            width: 320.0,
            height: 240.0,
            tags: TagCloudStyle::default(),
            palette: Palette::default(),
            ancestor_frames: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRect {
    pub node_id: usize,
    pub rect: Rect,
}

/// Positioned content of one day panel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutScene {
    pub day: usize,
    pub label: String,
    pub view: View,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cells: Option<Vec<TreemapCell>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frames: Option<Vec<FrameRect>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub items: Option<Vec<ListItem>>,
    /// Antichain in display order with the scores that produced it.
    pub antichain: Vec<AntichainEntry>,
}

impl LayoutScene {
    pub fn node_ids(&self) -> BTreeSet<usize> {
        match (&self.cells, &self.items) {
            (Some(cells), _) => cells.iter().map(|c| c.node_id).collect(),
            (_, Some(items)) => items.iter().map(|i| i.node_id).collect(),
            _ => BTreeSet::new(),
        }
    }
}

/// Builds a day panel from an antichain already sorted by `order_antichain`.
#[allow(clippy::too_many_arguments)]
pub fn build_scene(
    day: usize,
    label: &str,
    hierarchy: &ClusterHierarchy,
    ordered: &[AntichainEntry],
    view: View,
    word_cap: usize,
    style: &SceneStyle,
    color_of: impl Fn(usize, f64) -> Color,
) -> Result<LayoutScene> {
    let mut scene = LayoutScene {
        day,
        label: label.to_string(),
        view,
        cells: None,
        frames: None,
        items: None,
        antichain: ordered.to_vec(),
    };
    match view {
        View::List => {
            scene.items = Some(list_view(
                ordered,
                hierarchy,
                word_cap,
                &color_of,
                &style.palette,
            ));
        }
        View::Treemap => {
            let panel = Rect::new(0.0, 0.0, style.width, style.height);
            let antichain = Antichain {
                entries: ordered.to_vec(),
            };
            let geometry = layout_hierarchy(hierarchy, &antichain, panel)?;
            let score_of = |id: usize| {
                ordered
                    .iter()
                    .find(|e| e.node == id)
                    .map_or(0.0, |e| e.score)
            };
            let cells = geometry
                .cells
                .iter()
                .map(|c| {
                    let node = &hierarchy.nodes[c.node_id];
                    let color = color_of(c.node_id, score_of(c.node_id));
                    let mut tag_layout = tag_cloud(&node.tags, c.rect, word_cap, &style.tags);
                    for w in &mut tag_layout.words {
                        let r = Rect::new(w.x, w.y, w.w, w.h).normalized_in(&panel);
                        (w.x, w.y, w.w, w.h) = (r.x, r.y, r.w, r.h);
                    }
                    TreemapCell {
                        node_id: c.node_id,
                        user_count: node.size,
                        rect: c.rect.normalized_in(&panel),
                        color,
                        fill: style.palette.css(&color),
                        tag_layout,
                        degenerate: c.degenerate,
                    }
                })
                .collect();
            scene.cells = Some(cells);
            if style.ancestor_frames {
                scene.frames = Some(
                    geometry
                        .frames
                        .iter()
                        .map(|f| FrameRect {
                            node_id: f.node_id,
                            rect: f.rect.normalized_in(&panel),
                        })
                        .collect(),
                );
            }
        }
    }
    Ok(scene)
}

/// Standalone SVG with the panels side by side.
pub fn scenes_svg(scenes: &[LayoutScene], style: &SceneStyle) -> String {
    const GAP: f64 = 8.0;
    const HEADER: f64 = 16.0;
    const ITEM_H: f64 = 20.0;
    let (pw, ph) = (style.width, style.height);
    let body_h = scenes
        .iter()
        .map(|s| {
            s.items
                .as_ref()
                .map_or(ph, |items| (items.len() as f64 * ITEM_H).max(ph))
        })
        .fold(ph, f64::max);
    let total_w = scenes.len() as f64 * (pw + GAP) - if scenes.is_empty() { 0.0 } else { GAP };
    let total_h = HEADER + body_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}" font-family="sans-serif">"#,
        fmt(total_w),
        fmt(total_h),
        fmt(total_w),
        fmt(total_h)
    );
    for (k, scene) in scenes.iter().enumerate() {
        let ox = k as f64 * (pw + GAP);
        let _ = writeln!(
            svg,
            r#"<g class="day" data-day="{}" transform="translate({},0)">"#,
            scene.day,
            fmt(ox)
        );
        let _ = writeln!(
            svg,
            r#"<text class="day-label" x="0" y="12" font-size="12">{}</text>"#,
            escape(&scene.label)
        );
        for f in scene.frames.iter().flatten() {
            let _ = writeln!(
                svg,
                r##"<rect class="frame" data-node="{}" x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#999"/>"##,
                f.node_id,
                fmt(f.rect.x * pw),
                fmt(HEADER + f.rect.y * ph),
                fmt(f.rect.w * pw),
                fmt(f.rect.h * ph)
            );
        }
        for c in scene.cells.iter().flatten() {
            let _ = writeln!(
                svg,
                r##"<rect class="cell" data-node="{}" data-users="{}" x="{}" y="{}" width="{}" height="{}" fill="{}" stroke="#333"/>"##,
                c.node_id,
                c.user_count,
                fmt(c.rect.x * pw),
                fmt(HEADER + c.rect.y * ph),
                fmt(c.rect.w * pw),
                fmt(c.rect.h * ph),
                c.fill
            );
            for w in &c.tag_layout.words {
                let _ = writeln!(
                    svg,
                    r#"<text class="tag" x="{}" y="{}" font-size="{}">{}</text>"#,
                    fmt(w.x * pw),
                    fmt(HEADER + w.y * ph + w.font_size),
                    fmt(w.font_size),
                    escape(&w.term)
                );
            }
        }
        for (i, item) in scene.items.iter().flatten().enumerate() {
            let y = HEADER + i as f64 * ITEM_H;
            let _ = writeln!(
                svg,
                r##"<rect class="item" data-node="{}" x="0" y="{}" width="{}" height="{}" fill="{}" stroke="#333"/>"##,
                item.node_id,
                fmt(y),
                fmt(pw),
                fmt(ITEM_H),
                item.fill
            );
            let _ = writeln!(
                svg,
                r#"<text class="item-text" x="4" y="{}" font-size="11">{} {}</text>"#,
                fmt(y + 14.0),
                escape(&item.label),
                escape(&item.keywords.join(" "))
            );
        }
        svg.push_str("</g>\n");
    }
    svg.push_str("</svg>\n");
    svg
}

fn fmt(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}
