use moderatree::composite::build_composites;
use moderatree::data::ColumnRole;
use moderatree::linreg::{design_row, fit_ols};
use moderatree::mob::stability::{candidate_range, decorrelate, sup_lm, sup_lm_p_value};
use moderatree::mob::*;
use moderatree::rng::rng_from_seed;
use moderatree::synthetic::{generate, noise_moderators, trial_moderators, TrialGenConfig};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn numeric(name: &str, values: Vec<f64>) -> Moderator {
    Moderator { name: name.into(), kind: ModeratorKind::Numeric, values }
}

/// y = 10 + 0.5·baseline + effect(x)·treatment + σ·ε with a break in the
/// treatment effect at `cut`.
fn planted(seed: u64, n: usize, sigma: f64, cut: f64, below: f64, above: f64, x_range: (f64, f64)) -> MobData {
    let mut rng = rng_from_seed(seed);
    let mut outcome = Vec::with_capacity(n);
    let mut baseline = Vec::with_capacity(n);
    let mut treatment = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    let mut noise = Vec::with_capacity(n);
    for i in 0..n {
        let xi = rng.random_range(x_range.0..x_range.1).round();
        let b: f64 = rng.random_range(0.0..60.0);
        let t = (i % 2) as f64;
        let e: f64 = StandardNormal.sample(&mut rng);
        let effect = if xi <= cut { below } else { above };
        outcome.push(10.0 + 0.5 * b + effect * t + sigma * e);
        baseline.push(b);
        treatment.push(t);
        x.push(xi);
        noise.push(rng.random::<f64>());
    }
    MobData::new(outcome, baseline, treatment, vec![numeric("x", x), numeric("noise", noise)]).unwrap()
}

fn config(seed: u64) -> MobConfig {
    MobConfig { seed, ..Default::default() }
}

#[test]
fn constant_moderator_is_never_selected() {
    let mut d = planted(1, 200, 3.0, 50.0, 0.0, 12.0, (0.0, 100.0));
    d.moderators.push(numeric("const", vec![4.0; 200]));
    let tree = grow(&d, &config(1)).unwrap();
    let rec = tree.root.tests.iter().find(|r| r.moderator == "const").unwrap();
    assert_eq!(rec.raw_p, 1.0);
    assert!(!rec.tested);
    assert_ne!(tree.root.split.as_ref().unwrap().variable, "const");
}

#[test]
fn planted_break_is_highly_significant() {
    let mut hits = 0;
    for seed in 0..100 {
        let d = planted(seed, 200, 3.0, 50.0, 0.0, 12.0, (0.0, 100.0));
        let rows: Vec<usize> = (0..200).collect();
        let y = d.outcome.clone();
        let x: Vec<[f64; 3]> = rows.iter().map(|&i| d.design(i)).collect();
        let m = fit_ols(&y, &x).unwrap();
        let s = moderatree::linreg::score_contributions(&m, &x);
        let recs = node_tests(&d, &rows, &s, &config(3));
        hits += (recs[0].raw_p < 0.001) as usize;
    }
    assert!(hits >= 99, "{hits}/100");
}

#[test]
fn planted_cutpoint_recovered() {
    let d = planted(5, 2000, 3.0, 13.0, 0.0, 13.24, (5.0, 25.0));
    let rows: Vec<usize> = (0..2000).collect();
    let (rule, l, r) = find_cutpoint(&d, &rows, 0, 10).unwrap();
    let SplitRule::Numeric { cut } = rule else { panic!() };
    assert!((12.0..=14.0).contains(&cut), "cut {cut}");
    assert_eq!(l.len() + r.len(), 2000);
}

#[test]
fn forced_single_feasible_cut() {
    // 20 rows, min size 10: only the cut after the tenth ordered row works.
    let d = planted(2, 20, 1.0, 50.0, 0.0, 5.0, (0.0, 100.0));
    let mut d = d;
    d.moderators[0].values = (0..20).map(|i| i as f64).collect();
    let rows: Vec<usize> = (0..20).collect();
    let (rule, l, r) = find_cutpoint(&d, &rows, 0, 10).unwrap();
    assert_eq!(rule, SplitRule::Numeric { cut: 9.0 });
    assert_eq!((l.len(), r.len()), (10, 10));
}

#[test]
fn separable_break_has_zero_objective_at_break() {
    let n = 60;
    let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let baseline: Vec<f64> = (0..n).map(|i| ((i * 7) % 13) as f64).collect();
    let treatment: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
    let outcome: Vec<f64> = (0..n)
        .map(|i| {
            let effect = if x[i] <= 29.0 { 1.0 } else { 9.0 };
            2.0 + 0.3 * baseline[i] + effect * treatment[i]
        })
        .collect();
    let d = MobData::new(outcome, baseline, treatment, vec![numeric("x", x)]).unwrap();
    let rows: Vec<usize> = (0..n).collect();
    let (rule, _, _) = find_cutpoint(&d, &rows, 0, 10).unwrap();
    assert_eq!(rule, SplitRule::Numeric { cut: 29.0 });
}

#[test]
fn cross_product_objective_matches_refits() {
    let d = planted(8, 120, 3.0, 50.0, 0.0, 12.0, (0.0, 100.0));
    let rows: Vec<usize> = (0..120).collect();
    let (rule, ..) = find_cutpoint(&d, &rows, 0, 10).unwrap();
    // Brute force over every distinct value with full refits.
    let xs = &d.moderators[0].values;
    let mut cuts: Vec<f64> = xs.clone();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut best = (f64::INFINITY, f64::NAN);
    for &c in &cuts {
        let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| xs[i] <= c);
        if l.len() < 10 || r.len() < 10 {
            continue;
        }
        let fit = |rs: &[usize]| {
            let y: Vec<f64> = rs.iter().map(|&i| d.outcome[i]).collect();
            let x: Vec<[f64; 3]> = rs.iter().map(|&i| d.design(i)).collect();
            fit_ols(&y, &x).map(|m| m.rss)
        };
        if let (Ok(a), Ok(b)) = (fit(&l), fit(&r)) {
            if a + b < best.0 - 1e-9 {
                best = (a + b, c);
            }
        }
    }
    assert_eq!(rule, SplitRule::Numeric { cut: best.1 });
}

#[test]
fn categorical_split_groups_levels() {
    let n = 300;
    let mut rng = rng_from_seed(4);
    let codes: Vec<f64> = (0..n).map(|_| rng.random_range(0..4) as f64).collect();
    let treatment: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
    let baseline: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..50.0)).collect();
    let outcome: Vec<f64> = (0..n)
        .map(|i| {
            let effect = if codes[i] == 1.0 || codes[i] == 3.0 { 15.0 } else { 0.0 };
            let e: f64 = StandardNormal.sample(&mut rng);
            5.0 + 0.5 * baseline[i] + effect * treatment[i] + 2.0 * e
        })
        .collect();
    let levels = vec!["a".to_string(), "b".into(), "c".into(), "d".into()];
    let m = Moderator { name: "grp".into(), kind: ModeratorKind::Categorical { levels }, values: codes };
    let d = MobData::new(outcome, baseline, treatment, vec![m]).unwrap();
    let tree = grow(&d, &MobConfig { max_depth: Some(1), ..config(1) }).unwrap();
    let split = tree.root.split.as_ref().unwrap();
    let SplitRule::Categorical { left_levels, right_levels, .. } = &split.rule else { panic!() };
    assert_eq!(left_levels, &vec!["a".to_string(), "c".into()]);
    assert_eq!(right_levels, &vec!["b".to_string(), "d".into()]);
    assert_eq!(tree.root.tests[0].statistic_kind, StatisticKind::ChiSquare);
    assert_eq!(tree.root.tests[0].df, Some(9));
}

fn null_data(seed: u64) -> MobData {
    let mut moderators = trial_moderators();
    moderators.extend(noise_moderators(4));
    let cfg = TrialGenConfig { n: 200, seed, moderator_specs: moderators, ..Default::default() }.null_variant();
    let t = generate(&cfg).unwrap();
    let c = build_composites(&t, &cfg.composite_config()).unwrap();
    let names: Vec<String> =
        t.columns_with_role(ColumnRole::Moderator).iter().map(|&j| t.spec(j).name.clone()).collect();
    assert_eq!(names.len(), 36);
    MobData::from_table(&t, &c.post, &c.baseline, &names).unwrap()
}

#[test]
fn null_data_mostly_gives_single_leaf() {
    let single = (0..20).filter(|&s| grow(&null_data(1000 + s), &config(s)).unwrap().n_leaves() == 1).count();
    assert!(single >= 18, "{single}/20");
}

#[test]
fn large_min_node_size_gives_single_leaf() {
    let d = planted(3, 100, 3.0, 50.0, 0.0, 12.0, (0.0, 100.0));
    let tree = grow(&d, &MobConfig { min_node_size: 51, ..config(1) }).unwrap();
    assert_eq!(tree.n_leaves(), 1);
    assert_eq!(tree.root.stop_reason, Some(StopReason::TooSmall));
}

#[test]
fn partition_and_preorder_ids() {
    let d = planted(6, 400, 3.0, 50.0, 0.0, 12.0, (0.0, 100.0));
    let tree = grow(&d, &MobConfig { alpha: 0.5, ..config(1) }).unwrap();
    assert!(tree.n_leaves() >= 2);
    let leaf_n: usize = tree.leaves().iter().map(|l| l.n).sum();
    assert_eq!(leaf_n, 400);
    let ids: Vec<usize> = tree.root.preorder().iter().map(|n| n.id).collect();
    assert_eq!(ids, (1..=ids.len()).collect::<Vec<_>>());
    let routed = tree.leaf_ids(&d).unwrap();
    for leaf in tree.leaves() {
        assert_eq!(routed.iter().filter(|&&id| id == leaf.id).count(), leaf.n);
    }
    for node in tree.root.preorder() {
        if let Some(ch) = &node.children {
            assert!(ch[0].n >= 10 && ch[1].n >= 10);
            let split = node.split.as_ref().unwrap();
            let min = node.tests.iter().filter(|r| r.tested).map(|r| r.adjusted_p).fold(1.0, f64::min);
            assert_eq!(split.adjusted_p, min);
            assert!(split.adjusted_p <= 0.5);
        }
    }
}

fn expected_leaves(node: &MobNode, alpha: f64) -> usize {
    match (&node.split, &node.children) {
        (Some(split), Some(ch)) if split.adjusted_p <= alpha => {
            expected_leaves(&ch[0], alpha) + expected_leaves(&ch[1], alpha)
        }
        _ => 1,
    }
}

#[test]
fn prune_is_idempotent_and_thresholds() {
    let mut collapsed = 0;
    for seed in 0..8 {
        let d = planted(10 + seed, 300, 6.0, 50.0, 0.0, 4.0, (0.0, 100.0));
        let tree = grow(&d, &MobConfig { alpha: 0.2, ..config(seed) }).unwrap();
        let same = prune(&tree, &MobConfig { alpha: 0.2, ..config(seed) });
        assert_eq!(same, tree);
        let strict = prune(&tree, &config(seed));
        assert_eq!(prune(&strict, &config(seed)), strict);
        assert_eq!(strict.n_leaves(), expected_leaves(&tree.root, 0.05));
        for node in strict.root.preorder() {
            if let Some(split) = &node.split {
                assert!(split.adjusted_p <= 0.05);
            }
        }
        collapsed += tree.n_leaves() - strict.n_leaves();
    }
    assert!(collapsed > 0, "no node fell between the thresholds");
    let single = grow(&planted(1, 50, 3.0, 50.0, 0.0, 0.0, (0.0, 100.0)), &MobConfig { min_node_size: 30, ..config(1) })
        .unwrap();
    assert_eq!(prune(&single, &config(1)), single);
}

#[test]
fn prediction_routing_and_leaf_models() {
    let d = planted(7, 400, 3.0, 50.0, 0.0, 12.0, (0.0, 100.0));
    let tree = grow(&d, &config(2)).unwrap();
    let split = tree.root.split.as_ref().expect("planted break splits");
    let SplitRule::Numeric { cut } = split.rule else { panic!() };
    let children = tree.root.children.as_ref().unwrap();
    let (_, id) = tree.predict(&|k| if k == split.variable_index { cut } else { 0.5 }, 30.0, 1.0).unwrap();
    let left_ids: Vec<usize> = children[0].preorder().iter().map(|n| n.id).collect();
    assert!(left_ids.contains(&id));
    assert!(matches!(tree.predict(&|_| f64::NAN, 30.0, 1.0), Err(MobError::MissingSplitValue(_))));

    let single = grow(&d, &MobConfig { min_node_size: 300, ..config(2) }).unwrap();
    let (p, id) = single.predict(&|_| 1.0, 35.0, 1.0).unwrap();
    assert_eq!(id, 1);
    let rows: Vec<usize> = (0..400).collect();
    let y = d.outcome.clone();
    let x: Vec<[f64; 3]> = rows.iter().map(|&i| d.design(i)).collect();
    let m = fit_ols(&y, &x).unwrap();
    assert!((p - m.predict(&design_row(35.0, 1.0))).abs() < 1e-9);
}

#[test]
fn leaf_prediction_by_hand() {
    let mut leaf = fit_ols(
        &[1.0, 2.0, 3.0, 5.0, 4.0],
        &[design_row(0.0, 0.0), design_row(1.0, 1.0), design_row(2.0, 0.0), design_row(3.0, 1.0), design_row(4.0, 0.0)],
    )
    .unwrap();
    leaf.coefficients = [18.694, 0.428, 13.243];
    assert!((leaf.predict(&design_row(35.0, 1.0)) - 46.917).abs() < 1e-9);
}

#[test]
fn tree_json_is_stable_and_parses() {
    let d = planted(9, 300, 3.0, 50.0, 0.0, 12.0, (0.0, 100.0));
    let a = grow(&d, &config(4)).unwrap();
    let b = grow(&d, &config(4)).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    let v: serde_json::Value = serde_json::from_str(&a.to_json()).unwrap();
    let nodes = v["nodes"].as_array().unwrap();
    assert_eq!(nodes[0]["id"], 1);
    assert!(nodes[0]["model"]["b"].is_array());
    assert!(nodes[0]["tests"].is_array());
    if nodes.len() > 1 {
        assert_eq!(nodes[0]["kind"], "inner");
        assert!(nodes[0]["split"]["cut"].is_number());
        assert!(nodes[1]["effect"]["d"].is_number());
    }
}

#[test]
fn treatment_only_variant_runs() {
    let d = planted(11, 300, 3.0, 50.0, 0.0, 12.0, (0.0, 100.0));
    let tree = grow(&d, &MobConfig { test_target: TestTarget::TreatmentOnly, ..config(1) }).unwrap();
    assert_eq!(tree.root.split.as_ref().unwrap().variable, "x");
}

#[test]
fn rejects_bad_config() {
    let d = planted(1, 50, 3.0, 50.0, 0.0, 12.0, (0.0, 100.0));
    for c in [
        MobConfig { alpha: 0.0, ..config(1) },
        MobConfig { min_node_size: 3, ..config(1) },
        MobConfig { trim: 0.5, ..config(1) },
    ] {
        assert!(matches!(grow(&d, &c), Err(MobError::Config(_))));
    }
}

#[test]
fn single_arm_root_is_rank_deficient() {
    let mut d = planted(1, 50, 3.0, 50.0, 0.0, 12.0, (0.0, 100.0));
    d.treatment = vec![1.0; 50];
    assert!(matches!(grow(&d, &config(1)), Err(MobError::RootModel(_))));
}

#[test]
fn null_p_values_are_roughly_uniform() {
    let mut ps = Vec::new();
    for seed in 0..300 {
        let d = planted(50_000 + seed, 200, 3.0, 1e9, 5.0, 5.0, (0.0, 100.0));
        let mut d = d;
        d.moderators[0].values = d.moderators[1].values.clone();
        let rows: Vec<usize> = (0..200).collect();
        let x: Vec<[f64; 3]> = rows.iter().map(|&i| d.design(i)).collect();
        let m = fit_ols(&d.outcome, &x).unwrap();
        let s = moderatree::linreg::score_contributions(&m, &x);
        ps.push(node_tests(&d, &rows, &s, &MobConfig { mc_replicates: 999, ..config(1) })[0].raw_p);
    }
    ps.sort_by(f64::total_cmp);
    let ks = ps
        .iter()
        .enumerate()
        .map(|(i, &p)| ((i + 1) as f64 / 300.0 - p).abs().max((p - i as f64 / 300.0).abs()))
        .fold(0.0, f64::max);
    assert!(ks < 0.1, "ks {ks}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sup_lm_invariant_under_monotone_transforms(seed in 0u64..10_000, shift in -50.0f64..50.0, scale in 0.1f64..10.0) {
        let d = planted(seed, 80, 3.0, 50.0, 0.0, 8.0, (0.0, 100.0));
        let rows: Vec<usize> = (0..80).collect();
        let x: Vec<[f64; 3]> = rows.iter().map(|&i| d.design(i)).collect();
        let m = fit_ols(&d.outcome, &x).unwrap();
        let s = moderatree::linreg::score_contributions(&m, &x);
        let (u, _) = decorrelate(&s, TestTarget::AllParameters);
        let xs = &d.moderators[0].values;
        let transformed: Vec<f64> = xs.iter().map(|v| shift + scale * v.powi(3)).collect();
        let stat = |vals: &[f64]| {
            let mut order: Vec<usize> = (0..80).collect();
            order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));
            sup_lm(&u, 3, &order, vals, 0.1)
        };
        let (a, ca) = stat(xs);
        let (b, cb) = stat(&transformed);
        prop_assert_eq!(ca, cb);
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn mc_p_value_bounds(stat in 0.0f64..40.0) {
        let (lo, hi) = candidate_range(120, 0.1);
        let cands: Vec<usize> = (lo..=hi).collect();
        let p = sup_lm_p_value(stat, &cands, 120, 3, 0.1, 499, 9);
        prop_assert!(p >= 1.0 / 500.0 && p <= 1.0);
    }
}
