use moderatree::data::{ColumnKind, ColumnRole, ColumnSpec, DataTable};
use moderatree::impute::{impute, mean_impute, nrmse, ForestConfig};
use moderatree::rng::rng_from_seed;
use moderatree::synthetic::{generate, mask_mcar, TrialGenConfig};
use rand_distr::{Distribution, StandardNormal};

/// Equicorrelated latent normals (pairwise r = 0.6): eight numeric
/// columns, one binary and one three-level categorical thresholded from
/// further latents, plus a randomized treatment.
fn correlated(seed: u64) -> DataTable {
    let n = 200;
    let mut rng = rng_from_seed(seed);
    let (a, b) = (0.6f64.sqrt(), 0.4f64.sqrt());
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n); 11];
    for i in 0..n {
        let f: f64 = StandardNormal.sample(&mut rng);
        let z: Vec<f64> = (0..10).map(|_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            a * f + b * e
        }).collect();
        for k in 0..8 {
            cols[k].push(10.0 * (k + 1) as f64 + (k + 1) as f64 * z[k]);
        }
        cols[8].push((z[8] > 0.0) as u8 as f64);
        cols[9].push(if z[9] < -0.43 { 0.0 } else if z[9] < 0.43 { 1.0 } else { 2.0 });
        cols[10].push((i % 2) as f64);
    }
    let mut schema: Vec<ColumnSpec> = (0..8).map(|k| ColumnSpec::numeric(format!("v{k}"), ColumnRole::Moderator)).collect();
    schema.push(ColumnSpec::binary("flag", ColumnRole::Moderator));
    schema.push(ColumnSpec::categorical("level", &["lo", "mid", "hi"], ColumnRole::Moderator));
    schema.push(ColumnSpec::binary("treatment", ColumnRole::Treatment));
    DataTable::from_columns(schema, cols).unwrap()
}

#[test]
fn forest_imputation_beats_mean_imputation() {
    let mut wins = 0;
    for seed in 1..=10 {
        let table = correlated(seed);
        let m = mask_mcar(&table, 0.1, 1000 + seed);
        let result = impute(&m.masked, &ForestConfig { seed, ..Default::default() }).unwrap();
        let forest = nrmse(&result.completed, &m.truth, &m.mask);
        let mean = nrmse(&mean_impute(&m.masked), &m.truth, &m.mask);
        wins += (forest < mean) as usize;
        // Observed cells are untouched.
        for j in 0..table.n_cols() {
            for i in 0..table.n_rows() {
                if !m.masked.is_missing(j, i) {
                    assert_eq!(result.completed.values(j)[i].to_bits(), m.masked.values(j)[i].to_bits());
                }
            }
        }
        assert_eq!(result.completed.total_missing(), 0);
    }
    assert_eq!(wins, 10);
}

#[test]
fn imputed_values_respect_column_types() {
    let table = correlated(3);
    let m = mask_mcar(&table, 0.15, 5);
    let out = impute(&m.masked, &ForestConfig { n_trees: 30, seed: 2, ..Default::default() }).unwrap().completed;
    for j in 0..table.n_cols() {
        let spec = table.spec(j);
        for (i, &v) in out.values(j).iter().enumerate() {
            if !m.mask[j][i] {
                continue;
            }
            match &spec.kind {
                ColumnKind::Binary => assert!(v == 0.0 || v == 1.0),
                ColumnKind::Categorical { levels } => {
                    assert!(v.fract() == 0.0 && (v as usize) < levels.len())
                }
                ColumnKind::Numeric => {
                    // Forest predictions are averages of observed values.
                    let obs = m.masked.observed(j);
                    let (lo, hi) = obs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
                    assert!(v >= lo - 1e-9 && v <= hi + 1e-9, "{} row {i}: {v}", spec.name);
                }
            }
        }
    }
}

#[test]
fn deterministic_and_seed_sensitive() {
    let table = correlated(4);
    let m = mask_mcar(&table, 0.1, 8);
    let cfg = ForestConfig { n_trees: 20, seed: 6, ..Default::default() };
    let a = impute(&m.masked, &cfg).unwrap();
    let b = impute(&m.masked, &cfg).unwrap();
    assert_eq!(a.completed, b.completed);
    assert_eq!(a.trace_csv(), b.trace_csv());
    let c = impute(&m.masked, &ForestConfig { seed: 7, ..cfg }).unwrap();
    assert_ne!(a.completed, c.completed);
}

#[test]
fn convergence_trace_stops_by_rule() {
    let table = correlated(5);
    let m = mask_mcar(&table, 0.1, 9);
    let cfg = ForestConfig { n_trees: 20, seed: 1, max_iterations: 6, ..Default::default() };
    let r = impute(&m.masked, &cfg).unwrap();
    assert!(r.iterations_run >= 1 && r.iterations_run <= 6);
    let t = &r.convergence_trace;
    // Stopping before the cap means either delta grew in the last sweep,
    // or nothing changed at all.
    if t.len() < 6 {
        let k = t.len() - 1;
        let grew = k > 0 && (t[k].numeric > t[k - 1].numeric || t[k].categorical > t[k - 1].categorical);
        assert!(grew || (t[k].numeric == 0.0 && t[k].categorical == 0.0), "{t:?}");
    }
}

#[test]
fn treatment_and_id_are_never_masked_or_imputed() {
    let schema = vec![
        ColumnSpec::new("id", ColumnKind::Numeric, ColumnRole::Id),
        ColumnSpec::binary("treatment", ColumnRole::Treatment),
        ColumnSpec::numeric("x", ColumnRole::Moderator),
        ColumnSpec::numeric("y", ColumnRole::Moderator),
    ];
    let n = 60;
    let cols = vec![
        (0..n).map(|i| i as f64).collect(),
        (0..n).map(|i| (i % 2) as f64).collect(),
        (0..n).map(|i| i as f64 * 0.5).collect::<Vec<f64>>(),
        (0..n).map(|i| i as f64 * 1.5 + 2.0).collect(),
    ];
    let t = DataTable::from_columns(schema, cols).unwrap();
    let m = mask_mcar(&t, 0.3, 3);
    assert_eq!(m.masked.missing_count(0) + m.masked.missing_count(1), 0);
    let r = impute(&m.masked, &ForestConfig { n_trees: 50, mtry: Some(2), seed: 3, ..Default::default() }).unwrap();
    assert_eq!(r.completed.values(0), t.values(0));
    assert_eq!(r.completed.values(1), t.values(1));
    // y is an exact function of x.
    assert!(nrmse(&r.completed, &m.truth, &m.mask) < nrmse(&mean_impute(&m.masked), &m.truth, &m.mask));
}

#[test]
fn trial_table_imputes_completely() {
    let cfg = TrialGenConfig { n: 120, seed: 2, missing_rate: 0.05, ..Default::default() };
    let table = generate(&cfg).unwrap();
    assert!(table.total_missing() > 0);
    let r = impute(&table, &ForestConfig { n_trees: 20, seed: 1, max_iterations: 3, ..Default::default() }).unwrap();
    assert_eq!(r.completed.total_missing(), 0);
    assert!(r.convergence_trace.iter().all(|d| d.numeric.is_finite() && d.numeric >= 0.0 && d.categorical >= 0.0));
    assert_eq!(r.oob.len(), (0..table.n_cols()).filter(|&j| table.missing_count(j) > 0).count());
}
