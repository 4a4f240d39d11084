use moderatree::composite::build_composites;
use moderatree::data::{to_csv_string, ColumnRole};
use moderatree::mob::{grow, MobConfig, MobData, SplitRule};
use moderatree::synthetic::*;

fn mob_data(cfg: &TrialGenConfig) -> MobData {
    let t = generate(cfg).unwrap();
    let c = build_composites(&t, &cfg.composite_config()).unwrap();
    let mods: Vec<String> = t.columns_with_role(ColumnRole::Moderator).iter().map(|&j| t.spec(j).name.clone()).collect();
    MobData::from_table(&t, &c.post, &c.baseline, &mods).unwrap()
}

#[test]
fn moderator_means_are_calibrated() {
    let cfg = TrialGenConfig { n: 4000, seed: 11, ..Default::default() };
    let t = generate(&cfg).unwrap();
    for m in &cfg.moderator_specs {
        let j = t.column_index(&m.name).unwrap();
        let v = t.values(j);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let tol = 4.0 * m.marginal.sd() / (cfg.n as f64).sqrt();
        assert!((mean - m.marginal.mean()).abs() <= tol, "{}: {mean} vs {}", m.name, m.marginal.mean());
    }
}

#[test]
fn bitwise_reproducible() {
    let cfg = TrialGenConfig { n: 300, seed: 5, missing_rate: 0.05, ..Default::default() };
    assert_eq!(to_csv_string(&generate(&cfg).unwrap()), to_csv_string(&generate(&cfg).unwrap()));
}

#[test]
fn mask_fraction_concentrates() {
    let cfg = TrialGenConfig { n: 320, seed: 3, ..Default::default() };
    let t = generate(&cfg).unwrap();
    let maskable: usize = t
        .schema()
        .iter()
        .filter(|s| !matches!(s.role, ColumnRole::Treatment | ColumnRole::Id))
        .count()
        * t.n_rows();
    assert!(maskable >= 10_000);
    let m = mask_mcar(&t, 0.1, 77);
    let frac = m.masked_cells() as f64 / maskable as f64;
    assert!((0.08..=0.12).contains(&frac), "{frac}");
    let again = mask_mcar(&t, 0.1, 77);
    assert_eq!(m.mask, again.mask);
    assert_eq!(m.masked.total_missing(), m.masked_cells());
}

#[test]
fn reference_dataset_splits_on_the_planted_moderator() {
    let d = mob_data(&TrialGenConfig { n: 200, seed: 1, ..Default::default() });
    let tree = grow(&d, &MobConfig::default()).unwrap();
    let split = tree.root.split.as_ref().expect("root split");
    assert_eq!(split.variable, "joint_dyadic_coping");
    assert_eq!(split.rule, SplitRule::Numeric { cut: 13.0 });
}

#[test]
fn equal_effects_rarely_split() {
    let mut single = 0;
    for seed in 1..=20 {
        let mut cfg = TrialGenConfig { n: 200, seed, ..Default::default() }.null_variant();
        cfg.moderator_specs.extend(noise_moderators(4));
        let d = mob_data(&cfg);
        assert_eq!(d.moderators.len(), 36);
        single += (grow(&d, &MobConfig { mc_replicates: 1999, ..Default::default() }).unwrap().n_leaves() == 1) as usize;
    }
    assert!(single >= 18, "{single}/20");
}

#[test]
fn null_variant_has_one_effect() {
    let cfg = TrialGenConfig::default().null_variant();
    let p = &cfg.planted_effect;
    assert_eq!(p.effect_below, p.effect_above);
    assert_eq!(cfg.intercept_below, cfg.intercept_above);
    assert_eq!(cfg.baseline_post_slope_below, cfg.baseline_post_slope_above);
}
