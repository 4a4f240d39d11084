//! Static SVG figures: tree diagram, composite density, per-leaf forest plot
//! and importance bars.

use std::fmt::Write;

use crate::mob::{BoxStats, MobNode, MobTree, SplitRule};
use crate::mobforest::ImportanceTable;

const FONT: &str = "font-family=\"Helvetica, Arial, sans-serif\"";
const CONTROL: &str = "#9e9e9e";
const TREATED: &str = "#2b6cb0";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(width: f64, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn text(out: &mut String, x: f64, y: f64, size: f64, anchor: &str, s: &str) {
    let _ = writeln!(
        out,
        "<text x=\"{x:.2}\" y=\"{y:.2}\" font-size=\"{size}\" text-anchor=\"{anchor}\" {FONT}>{}</text>",
        escape(s)
    );
}

fn line(out: &mut String, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64) {
    let _ = writeln!(
        out,
        "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"{stroke}\" stroke-width=\"{width}\"/>"
    );
}

fn fmt_num(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e9 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn fmt_p(p: f64) -> String {
    if p < 0.001 {
        "p < 0.001".into()
    } else {
        format!("p = {p:.3}")
    }
}

fn edge_labels(rule: &SplitRule) -> (String, String) {
    match rule {
        SplitRule::Numeric { cut } => (format!("≤ {}", fmt_num(*cut)), format!("> {}", fmt_num(*cut))),
        SplitRule::Categorical { left_levels, right_levels, .. } => {
            (format!("{{{}}}", left_levels.join(", ")), format!("{{{}}}", right_levels.join(", ")))
        }
    }
}

struct Layout<'a> {
    node: &'a MobNode,
    x: f64,
    y: f64,
}

fn layout<'a>(node: &'a MobNode, next_leaf: &mut usize, out: &mut Vec<Layout<'a>>, leaf_w: f64, level_h: f64) -> f64 {
    let y = 40.0 + node.depth as f64 * level_h;
    let x = match &node.children {
        None => {
            let x = leaf_w * (*next_leaf as f64 + 0.5);
            *next_leaf += 1;
            x
        }
        Some(children) => {
            let l = layout(&children[0], next_leaf, out, leaf_w, level_h);
            let r = layout(&children[1], next_leaf, out, leaf_w, level_h);
            (l + r) / 2.0
        }
    };
    out.push(Layout { node, x, y });
    x
}

fn box_glyph(out: &mut String, stats: &BoxStats, cx: f64, w: f64, y_of: &dyn Fn(f64) -> f64, color: &str) {
    line(out, cx, y_of(stats.min), cx, y_of(stats.q1), "black", 1.0);
    line(out, cx, y_of(stats.q3), cx, y_of(stats.max), "black", 1.0);
    line(out, cx - w / 4.0, y_of(stats.min), cx + w / 4.0, y_of(stats.min), "black", 1.0);
    line(out, cx - w / 4.0, y_of(stats.max), cx + w / 4.0, y_of(stats.max), "black", 1.0);
    let (top, bottom) = (y_of(stats.q3), y_of(stats.q1));
    let _ = writeln!(
        out,
        "<rect x=\"{:.2}\" y=\"{top:.2}\" width=\"{w:.2}\" height=\"{:.2}\" fill=\"{color}\" fill-opacity=\"0.6\" stroke=\"black\"/>",
        cx - w / 2.0,
        (bottom - top).max(0.5)
    );
    line(out, cx - w / 2.0, y_of(stats.median), cx + w / 2.0, y_of(stats.median), "black", 2.0);
}

/// Tree diagram. Inner nodes show the split variable and adjusted p-value;
/// leaves show n, the treatment coefficient, Cohen's d with its interval,
/// and box plots of post scores by arm on a shared axis.
pub fn render_tree_svg(tree: &MobTree) -> String {
    let leaf_w = 190.0;
    let level_h = 110.0;
    let glyph_h = 150.0;
    let mut nodes = Vec::new();
    layout(&tree.root, &mut 0, &mut nodes, leaf_w, level_h);
    nodes.sort_by_key(|l| l.node.id);
    let n_leaves = tree.n_leaves() as f64;
    let width = (leaf_w * n_leaves).max(380.0);
    let height = 40.0 + tree.depth() as f64 * level_h + 70.0 + glyph_h + 40.0;

    let stats: Vec<BoxStats> =
        tree.leaves().iter().flat_map(|l| [l.arms.control, l.arms.treatment]).flatten().collect();
    let lo = stats.iter().map(|s| s.min).fold(f64::INFINITY, f64::min);
    let hi = stats.iter().map(|s| s.max).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo {
        ((lo / 10.0).floor() * 10.0, (hi / 10.0).ceil() * 10.0)
    } else {
        (lo.min(0.0) - 1.0, hi.max(0.0) + 1.0)
    };

    let mut out = header(width, height);
    for l in &nodes {
        if let (Some(children), Some(split)) = (&l.node.children, &l.node.split) {
            let (left_label, right_label) = edge_labels(&split.rule);
            for (child, label) in children.iter().zip([left_label, right_label]) {
                let c = nodes.iter().find(|k| k.node.id == child.id).expect("child laid out");
                line(&mut out, l.x, l.y + 20.0, c.x, c.y - 18.0, "#555", 1.2);
                text(&mut out, (l.x + c.x) / 2.0, (l.y + c.y) / 2.0 + 4.0, 11.0, "middle", &label);
            }
        }
    }
    for l in &nodes {
        let node = l.node;
        match &node.split {
            Some(split) => {
                let _ = writeln!(
                    out,
                    "<ellipse cx=\"{:.2}\" cy=\"{:.2}\" rx=\"85\" ry=\"22\" fill=\"#f1f5f9\" stroke=\"black\"/>",
                    l.x, l.y
                );
                text(&mut out, l.x, l.y - 3.0, 12.0, "middle", &format!("{} {}", node.id, split.variable));
                text(&mut out, l.x, l.y + 12.0, 11.0, "middle", &fmt_p(split.adjusted_p));
            }
            None => {
                let top = l.y - 18.0;
                let _ = writeln!(
                    out,
                    "<rect x=\"{:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"#bbb\"/>",
                    l.x - leaf_w / 2.0 + 6.0,
                    leaf_w - 12.0,
                    height - top - 10.0
                );
                text(&mut out, l.x, l.y, 12.0, "middle", &format!("Node {} (n = {})", node.id, node.n));
                text(&mut out, l.x, l.y + 15.0, 11.0, "middle", &format!("treatment b = {:.2}", node.model.coefficients[2]));
                let d_label = match &node.effect {
                    Some(e) => format!("d = {:.2} [{:.2}, {:.2}]", e.d, e.ci_low, e.ci_high),
                    None => "d not estimable".into(),
                };
                text(&mut out, l.x, l.y + 30.0, 11.0, "middle", &d_label);
                let g_top = height - 40.0 - glyph_h;
                let g_bottom = height - 40.0;
                let y_of = |v: f64| g_bottom - (v - lo) / (hi - lo) * glyph_h;
                line(&mut out, l.x - 60.0, g_top, l.x - 60.0, g_bottom, "#333", 1.0);
                for v in [lo, (lo + hi) / 2.0, hi] {
                    text(&mut out, l.x - 64.0, y_of(v) + 4.0, 9.0, "end", &fmt_num(v));
                }
                for (stats, dx, color, label) in
                    [(&node.arms.control, -22.0, CONTROL, "C"), (&node.arms.treatment, 22.0, TREATED, "T")]
                {
                    if let Some(s) = stats {
                        box_glyph(&mut out, s, l.x + dx, 26.0, &y_of, color);
                    }
                    text(&mut out, l.x + dx, g_bottom + 14.0, 10.0, "middle", label);
                }
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Silverman's rule of thumb, 0.9·min(sd, IQR/1.34)·n^(−1/5). Falls back to
/// the nonzero one of the two spreads, and to 0.5 for constant input.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let iqr = BoxStats::from_values(values).map_or(0.0, |b| b.q3 - b.q1) / 1.34;
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        (false, false) => return 0.5,
    };
    0.9 * spread * n.powf(-0.2)
}

/// Gaussian kernel density estimate evaluated at `grid`.
pub fn kde(values: &[f64], bandwidth: f64, grid: &[f64]) -> Vec<f64> {
    let norm = 1.0 / (values.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&g| values.iter().map(|&v| (-0.5 * ((g - v) / bandwidth).powi(2)).exp()).sum::<f64>() * norm)
        .collect()
}

pub struct DensityPanel {
    pub title: String,
    pub values: Vec<f64>,
    /// Upper end of the x axis; the lower end is 0.
    pub x_max: f64,
}

/// Kernel density panels stacked in a grid, three per row.
pub fn render_density_svg(panels: &[DensityPanel]) -> String {
    let (pw, ph) = (300.0, 200.0);
    let cols = panels.len().clamp(1, 3);
    let rows = panels.len().div_ceil(3).max(1);
    let mut out = header(pw * cols as f64, ph * rows as f64);
    for (k, panel) in panels.iter().enumerate() {
        let (ox, oy) = ((k % 3) as f64 * pw, (k / 3) as f64 * ph);
        let (left, right, top, bottom) = (ox + 45.0, ox + pw - 15.0, oy + 30.0, oy + ph - 35.0);
        text(&mut out, (left + right) / 2.0, oy + 18.0, 12.0, "middle", &panel.title);
        line(&mut out, left, bottom, right, bottom, "black", 1.0);
        line(&mut out, left, top, left, bottom, "black", 1.0);
        let steps = 200;
        let grid: Vec<f64> = (0..=steps).map(|i| panel.x_max * i as f64 / steps as f64).collect();
        let dens = if panel.values.len() >= 2 {
            kde(&panel.values, silverman_bandwidth(&panel.values), &grid)
        } else {
            vec![0.0; grid.len()]
        };
        let peak = dens.iter().copied().fold(0.0, f64::max);
        let y_max = if peak > 0.0 { peak * 1.05 } else { 1.0 };
        let xs = |x: f64| left + x / panel.x_max * (right - left);
        let ys = |d: f64| bottom - d / y_max * (bottom - top);
        let mut path = String::new();
        for (i, (&g, &d)) in grid.iter().zip(&dens).enumerate() {
            let _ = write!(path, "{}{:.2},{:.2}", if i == 0 { "M" } else { " L" }, xs(g), ys(d));
        }
        let _ = writeln!(out, "<path d=\"{path}\" fill=\"none\" stroke=\"{TREATED}\" stroke-width=\"1.5\"/>");
        for t in 0..=((panel.x_max / 10.0).floor() as usize) {
            let v = t as f64 * 10.0;
            line(&mut out, xs(v), bottom, xs(v), bottom + 4.0, "black", 1.0);
            text(&mut out, xs(v), bottom + 16.0, 9.0, "middle", &fmt_num(v));
        }
        text(&mut out, left - 6.0, top + 4.0, 9.0, "end", &format!("{y_max:.3}"));
        text(&mut out, left - 6.0, bottom, 9.0, "end", "0");
    }
    out.push_str("</svg>\n");
    out
}

/// Cohen's d with 95% interval per leaf, on a common axis through 0.
pub fn render_forest_plot_svg(tree: &MobTree) -> String {
    let leaves: Vec<&MobNode> = tree.leaves().into_iter().filter(|l| l.effect.is_some()).collect();
    let row_h = 32.0;
    let (label_w, plot_w) = (170.0, 360.0);
    let height = 70.0 + row_h * leaves.len().max(1) as f64;
    let mut out = header(label_w + plot_w + 40.0, height);
    let lo = leaves.iter().map(|l| l.effect.unwrap().ci_low).fold(0.0, f64::min);
    let hi = leaves.iter().map(|l| l.effect.unwrap().ci_high).fold(0.0, f64::max);
    let (lo, hi) = ((lo * 2.0).floor() / 2.0, ((hi * 2.0).ceil() / 2.0).max(lo + 0.5));
    let xs = |v: f64| label_w + (v - lo) / (hi - lo) * plot_w;
    let bottom = 30.0 + row_h * leaves.len().max(1) as f64;
    text(&mut out, label_w + plot_w / 2.0, 18.0, 12.0, "middle", "Cohen's d (95% CI) by terminal node");
    line(&mut out, xs(0.0), 25.0, xs(0.0), bottom, "#999", 1.0);
    line(&mut out, label_w, bottom, label_w + plot_w, bottom, "black", 1.0);
    let mut tick = lo;
    while tick <= hi + 1e-9 {
        line(&mut out, xs(tick), bottom, xs(tick), bottom + 4.0, "black", 1.0);
        text(&mut out, xs(tick), bottom + 16.0, 9.0, "middle", &format!("{tick:.1}"));
        tick += 0.5;
    }
    for (k, leaf) in leaves.iter().enumerate() {
        let e = leaf.effect.unwrap();
        let y = 30.0 + row_h * (k as f64 + 0.5);
        text(&mut out, 10.0, y + 4.0, 11.0, "start", &format!("Node {} (n = {})", leaf.id, leaf.n));
        line(&mut out, xs(e.ci_low), y, xs(e.ci_high), y, "black", 1.5);
        let _ = writeln!(out, "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"8\" height=\"8\" fill=\"{TREATED}\"/>", xs(e.d) - 4.0, y - 4.0);
        text(&mut out, label_w + plot_w + 35.0, y + 4.0, 9.0, "end", &format!("{:.2}", e.d));
    }
    out.push_str("</svg>\n");
    out
}

/// Horizontal importance bars, most important first; non-positive bars are
/// drawn in grey.
pub fn render_importance_svg(table: &ImportanceTable) -> String {
    let mut entries: Vec<_> = table.entries.iter().collect();
    entries.sort_by_key(|e| e.rank);
    let row_h = 18.0;
    let (label_w, plot_w) = (230.0, 320.0);
    let height = 50.0 + row_h * entries.len().max(1) as f64;
    let mut out = header(label_w + plot_w + 30.0, height);
    let lo = entries.iter().map(|e| e.importance).fold(0.0, f64::min);
    let hi = entries.iter().map(|e| e.importance).fold(0.0, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let xs = |v: f64| label_w + (v - lo) / span * plot_w;
    let bottom = 20.0 + row_h * entries.len().max(1) as f64;
    line(&mut out, xs(0.0), 15.0, xs(0.0), bottom, "black", 1.0);
    for (k, e) in entries.iter().enumerate() {
        let y = 20.0 + row_h * k as f64;
        text(&mut out, label_w - 6.0, y + 12.0, 10.0, "end", &e.name);
        let (a, b) = (xs(0.0).min(xs(e.importance)), xs(0.0).max(xs(e.importance)));
        let color = if e.selected { TREATED } else { CONTROL };
        let _ = writeln!(out, "<rect x=\"{a:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{color}\"/>", y + 3.0, b - a, row_h - 6.0);
    }
    text(&mut out, xs(lo), bottom + 16.0, 9.0, "middle", &format!("{lo:.2}"));
    text(&mut out, xs(hi), bottom + 16.0, 9.0, "middle", &format!("{hi:.2}"));
    text(&mut out, label_w + plot_w / 2.0, bottom + 28.0, 10.0, "middle", "Permutation importance (OOB MSE increase)");
    out.push_str("</svg>\n");
    out
}
