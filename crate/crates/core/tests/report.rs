use moderatree::mob::{grow, MobConfig, MobData, Moderator, ModeratorKind};
use moderatree::mobforest::ImportanceTable;
use moderatree::report::*;
use moderatree::rng::rng_from_seed;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn data(seed: u64, effect_jump: f64) -> MobData {
    let n = 240;
    let mut rng = rng_from_seed(seed);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..40) as f64).collect();
    let level: Vec<f64> = (0..n).map(|_| rng.random_range(0..3) as f64).collect();
    let baseline: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..60.0)).collect();
    let treatment: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
    let outcome = (0..n)
        .map(|i| {
            let e: f64 = StandardNormal.sample(&mut rng);
            let effect = if x[i] > 20.0 { effect_jump } else { 0.0 } + if level[i] == 2.0 { effect_jump } else { 0.0 };
            5.0 + 0.6 * baseline[i] + effect * treatment[i] + 2.0 * e
        })
        .collect();
    let mods = vec![
        Moderator { name: "x".into(), kind: ModeratorKind::Numeric, values: x },
        Moderator {
            name: "level".into(),
            kind: ModeratorKind::Categorical { levels: vec!["low & co".into(), "mid".into(), "high".into()] },
            values: level,
        },
    ];
    MobData::new(outcome, baseline, treatment, mods).unwrap()
}

fn parse(svg: &str) -> roxmltree::Document<'_> {
    let doc = roxmltree::Document::parse(svg).expect("well-formed SVG");
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    doc
}

fn texts(doc: &roxmltree::Document) -> Vec<String> {
    doc.descendants().filter(|n| n.has_tag_name("text")).map(|n| n.text().unwrap_or("").to_string()).collect()
}

fn box_count(doc: &roxmltree::Document) -> usize {
    doc.descendants().filter(|n| n.has_tag_name("rect") && n.attribute("fill-opacity").is_some()).count()
}

fn config() -> MobConfig {
    MobConfig { mc_replicates: 499, ..Default::default() }
}

#[test]
fn split_tree_renders_every_node() {
    let tree = grow(&data(1, 10.0), &config()).unwrap();
    assert!(tree.n_leaves() >= 3);
    let svg = render_tree_svg(&tree);
    let doc = parse(&svg);
    let labels = texts(&doc);
    let inner = tree.root.preorder().iter().filter(|n| n.split.is_some()).count();
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("ellipse")).count(), inner);
    assert_eq!(box_count(&doc), 2 * tree.n_leaves());
    for leaf in tree.leaves() {
        assert!(labels.contains(&format!("Node {} (n = {})", leaf.id, leaf.n)));
    }
    // Level names are escaped, not dropped.
    assert!(svg.contains("&amp;") || !labels.iter().any(|l| l.contains("low")));
}

#[test]
fn single_leaf_tree_has_one_box_pair() {
    let tree = grow(&data(2, 0.0), &config()).unwrap();
    assert_eq!(tree.n_leaves(), 1);
    let svg = render_tree_svg(&tree);
    let doc = parse(&svg);
    assert_eq!(box_count(&doc), 2);
    assert!(!texts(&doc).iter().any(|t| t.starts_with('≤') || t.starts_with('>')));
    let fp = render_forest_plot_svg(&tree);
    let forest = parse(&fp);
    assert_eq!(texts(&forest).iter().filter(|t| t.starts_with("Node ")).count(), 1);
}

#[test]
fn density_panels_render_including_degenerate_input() {
    let panels = vec![
        DensityPanel { title: "Baseline".into(), values: (0..100).map(|i| (i % 60) as f64).collect(), x_max: 60.0 },
        DensityPanel { title: "Constant".into(), values: vec![20.0; 50], x_max: 60.0 },
        DensityPanel { title: "Single".into(), values: vec![3.0], x_max: 60.0 },
        DensityPanel { title: "Post".into(), values: vec![10.0, 30.0], x_max: 60.0 },
    ];
    let svg = render_density_svg(&panels);
    let doc = parse(&svg);
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("path")).count(), 4);
    for p in doc.descendants().filter(|n| n.has_tag_name("path")) {
        assert!(!p.attribute("d").unwrap().contains("NaN"));
    }
}

#[test]
fn kde_is_a_density() {
    let values = [10.0, 12.0, 15.0, 30.0, 31.0];
    let h = silverman_bandwidth(&values);
    let grid: Vec<f64> = (0..=16000).map(|i| -60.0 + i as f64 * 0.01).collect();
    let dens = kde(&values, h, &grid);
    let area: f64 = dens.windows(2).map(|w| 0.005 * (w[0] + w[1])).sum();
    assert!((area - 1.0).abs() < 1e-6, "{area}");
    // Symmetric data gives a symmetric estimate.
    let sym = kde(&[-1.0, 1.0], 0.7, &[-0.3, 0.3]);
    assert!((sym[0] - sym[1]).abs() < 1e-15);
}

#[test]
fn importance_plot_lists_every_moderator() {
    let names: Vec<String> = ["a", "b<c", "d"].iter().map(|s| s.to_string()).collect();
    let t = ImportanceTable::from_importances(names, vec![0.5, -0.2, 0.0], vec![3, 3, 0]);
    let svg = render_importance_svg(&t);
    let doc = parse(&svg);
    let labels = texts(&doc);
    for n in ["a", "b<c", "d"] {
        assert!(labels.iter().any(|l| l == n));
    }
}
