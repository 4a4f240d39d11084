use moderatree::composite::build_composites;
use moderatree::data::ColumnRole;
use moderatree::mob::{MobConfig, MobData};
use moderatree::synthetic::{generate, TrialGenConfig};
use moderatree::validate::*;
use proptest::prelude::*;

fn trial(seed: u64) -> MobData {
    let cfg = TrialGenConfig { n: 200, seed, ..Default::default() };
    let t = generate(&cfg).unwrap();
    let c = build_composites(&t, &cfg.composite_config()).unwrap();
    let mods: Vec<String> = t.columns_with_role(ColumnRole::Moderator).iter().map(|&j| t.spec(j).name.clone()).collect();
    MobData::from_table(&t, &c.post, &c.baseline, &mods).unwrap()
}

fn tree_only(tree: MobConfig) -> MobProcedure {
    MobProcedure { forest: None, tree: MobConfig { seed: 3, ..tree } }
}

#[test]
fn interval_for_unit_effect() {
    let e = EffectSize::from_d(1.0, 83, 84);
    assert_eq!(((e.ci_low * 100.0).round() / 100.0, (e.ci_high * 100.0).round() / 100.0), (0.68, 1.32));
    // Large-sample SE by hand.
    let se = (167.0f64 / (83.0 * 84.0) + 1.0 / 334.0).sqrt();
    approx::assert_relative_eq!(e.se_d, se, epsilon = 1e-12);
}

#[test]
fn one_observation_arm_is_an_error() {
    assert!(matches!(cohens_d(&[1.0], &[1.0, 2.0]), Err(ValidateError::SingleArmLeaf { n_treat: 1, n_control: 2 })));
}

#[test]
fn r2_rmse_by_hand() {
    let obs = [1.0, 2.0, 3.0, 4.0, 5.0];
    let pred = [1.5, 2.0, 2.5, 4.5, 5.0];
    // SSE 0.75, SST 10.
    let m = r2_rmse(&pred, &obs, 1).unwrap();
    approx::assert_relative_eq!(m.r2, 0.925, epsilon = 1e-12);
    approx::assert_relative_eq!(m.adj_r2, 1.0 - 0.075 * 4.0 / 3.0, epsilon = 1e-12);
    approx::assert_relative_eq!(m.rmse, 0.15f64.sqrt(), epsilon = 1e-12);
    assert_eq!(r2_rmse(&obs, &obs, 0).unwrap().r2, 1.0);
    assert_eq!(r2_rmse(&[3.0; 5], &obs, 0).unwrap().r2, 0.0);
    assert_eq!(r2_rmse(&pred, &[2.0; 5], 0), Err(ValidateError::ZeroVariance));
    assert_eq!(r2_rmse(&pred, &obs, 4), Err(ValidateError::Shape));
}

#[test]
fn constant_predictor_has_no_optimism() {
    let d = trial(2);
    let mean = d.outcome.iter().sum::<f64>() / d.n() as f64;
    let r = bootstrap_bias_correct(&d, &ConstantProcedure(mean), 200, 1).unwrap();
    assert!(r.optimism.r2.abs() < 0.02, "{:?}", r.optimism);
    assert_eq!(r.n_skipped, 0);
    assert_eq!(r.replicates.len(), 200);
}

#[test]
fn overgrown_tree_is_optimistic() {
    let d = trial(3);
    let loose = tree_only(MobConfig { alpha: 0.999, bonferroni: false, mc_replicates: 499, ..Default::default() });
    let r = bootstrap_bias_correct(&d, &loose, 25, 4).unwrap();
    assert!(r.optimism.r2 > 0.05, "{:?}", r.optimism);
    assert!(r.corrected.r2 < r.apparent.r2);
    assert!(r.corrected.rmse > r.apparent.rmse);
}

#[test]
fn stump_explains_a_plausible_share() {
    // Single datasets scatter around 0.42 with a spread of about 0.05.
    let stump = tree_only(MobConfig { max_depth: Some(1), alpha: 0.999, mc_replicates: 99, ..Default::default() });
    let mut r2: Vec<f64> = (1..=10)
        .map(|seed| {
            let d = trial(seed).select_moderators(&["joint_dyadic_coping".to_string()]).unwrap();
            let fit = stump.run(&d, 0).unwrap();
            assert_eq!(fit.tree.n_leaves(), 2, "seed {seed}");
            r2_rmse(&Fitted::predict(&fit.tree, &d).unwrap(), &d.outcome, Fitted::n_params(&fit.tree)).unwrap().r2
        })
        .collect();
    let inside = r2.iter().filter(|r| (0.25..=0.5).contains(*r)).count();
    r2.sort_by(f64::total_cmp);
    assert!(inside >= 8, "{r2:?}");
    assert!((0.25..=0.5).contains(&r2[5]), "{r2:?}");
}

#[test]
fn report_is_reproducible() {
    let d = trial(4);
    let p = tree_only(MobConfig { max_depth: Some(2), mc_replicates: 499, ..Default::default() });
    let a = bootstrap_bias_correct(&d, &p, 8, 9).unwrap();
    let b = bootstrap_bias_correct(&d, &p, 8, 9).unwrap();
    assert_eq!(a, b);
    for rec in &a.replicates {
        assert!(rec.train.r2 <= 1.0 && rec.test.r2 <= 1.0);
    }
    let mean_gap = a.replicates.iter().map(|r| r.train.r2 - r.test.r2).sum::<f64>() / a.replicates.len() as f64;
    approx::assert_relative_eq!(a.optimism.r2, mean_gap, epsilon = 1e-12);
    approx::assert_relative_eq!(a.corrected.r2, a.apparent.r2 - a.optimism.r2, epsilon = 1e-12);
}

proptest! {
    #[test]
    fn d_is_location_scale_invariant_and_antisymmetric(
        t in prop::collection::vec(-50.0..50.0f64, 3..30),
        c in prop::collection::vec(-50.0..50.0f64, 3..30),
        shift in -100.0..100.0f64,
        scale in 0.1..10.0f64,
    ) {
        let d = cohens_d(&t, &c).unwrap();
        prop_assume!(d.d.is_finite());
        let swapped = cohens_d(&c, &t).unwrap();
        prop_assert!((d.d + swapped.d).abs() < 1e-9);
        let f = |v: &[f64]| v.iter().map(|x| x * scale + shift).collect::<Vec<_>>();
        let moved = cohens_d(&f(&t), &f(&c)).unwrap();
        prop_assert!((d.d - moved.d).abs() < 1e-7 * (1.0 + d.d.abs()));
        prop_assert!(d.ci_low < d.d && d.d < d.ci_high);
    }
}
