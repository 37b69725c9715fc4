//! Hand-checked examples for each preprocessing step.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use gpforecast::conf::ConfMap;
use gpforecast::pipeline::*;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(text: &str) -> PipelineConfig {
    PipelineConfig::from_conf(&ConfMap::parse(text).unwrap(), Path::new(".")).unwrap()
}

fn numbers(table: &FeatureTable, name: &str) -> Vec<Option<f64>> {
    table.column(name).unwrap().as_numeric().unwrap().to_vec()
}

fn grouping() -> CategoryGrouping {
    CategoryGrouping {
        description_column: "desc".into(),
        category_column: "pos_type".into(),
        map: BTreeMap::from([
            ("supermercado".to_string(), "Supermarket".to_string()),
            ("farmacia".to_string(), "Pharmacy".to_string()),
        ]),
        stop_words: BTreeSet::from(["la".to_string(), "el".to_string()]),
        generic_tokens: BTreeSet::from(["tienda".to_string()]),
    }
}

#[test]
fn descriptions_map_to_trade_categories() {
    let g = grouping();
    assert_eq!(categorize("SUPERMERCADO LA ESTRELLA", &g), "Supermarket");
    assert_eq!(categorize("", &g), OTHER);
    assert_eq!(categorize("tienda el sol", &g), OTHER);
    assert_eq!(categorize("Farmacia-24", &g), "Pharmacy");
}

#[test]
fn grouping_is_idempotent() {
    let mut cfg = config("target = y\ncategorical = desc\ndescription_column = desc\ncategory_column = pos_type");
    cfg.grouping = Some(grouping());
    let table = ingest_str(
        "desc,y\nSUPERMERCADO LA ESTRELLA,1\nFARMACIA SAN JUAN,2\nOXXO,3\n,4\n",
        &cfg.schema(),
    )
    .unwrap();
    let once = group_categories(&table, &cfg).unwrap();
    let twice = group_categories(&once, &cfg).unwrap();
    assert_eq!(once, twice);
    let cats = once.column("pos_type").unwrap().as_text().unwrap();
    let cats: Vec<&str> = cats.iter().map(|c| c.as_deref().unwrap()).collect();
    assert_eq!(cats, ["Supermarket", "Pharmacy", OTHER, OTHER]);
}

#[test]
fn standardization_and_one_hot() {
    let cfg = config("target = y\nnumerical = v\ncategorical = c\nlog_target = false");
    let table = ingest_str("v,c,y\n1,red,0\n2,green,0\n3,blue,0\n", &cfg.schema()).unwrap();
    let (encoded, artifact) = normalize_and_encode(&table, &cfg).unwrap();
    let v = numbers(&encoded, "v");
    for (got, want) in v.iter().zip([-1.2247, 0.0, 1.2247]) {
        assert!((got.unwrap() - want).abs() < 1e-4, "{got:?} vs {want}");
    }
    let names: Vec<&str> = encoded.columns().iter().map(|c| c.name.as_str()).collect();
    assert_eq!(names, ["v", "c=blue", "c=green", "c=red", "y"]);
    for r in 0..3 {
        let s: f64 = ["c=blue", "c=green", "c=red"].iter().map(|n| numbers(&encoded, n)[r].unwrap()).sum();
        assert_eq!(s, 1.0);
    }

    let later = ingest_str("v,c,y\n2,purple,0\n", &cfg.schema()).unwrap();
    let applied = apply_encoding(&later, &artifact).unwrap();
    for n in ["c=blue", "c=green", "c=red"] {
        assert_eq!(numbers(&applied, n), [Some(0.0)]);
    }
}

#[test]
fn constant_column_is_centered_with_unit_scale() {
    let cfg = config("target = y\nnumerical = v\nlog_target = false");
    let table = ingest_str("v,y\n4,0\n4,1\n4,2\n", &cfg.schema()).unwrap();
    let (encoded, artifact) = normalize_and_encode(&table, &cfg).unwrap();
    assert_eq!(numbers(&encoded, "v"), [Some(0.0); 3]);
    assert_eq!(artifact.scalers[0].scale, 1.0);
    assert_eq!(artifact.warnings.len(), 1);
}

#[test]
fn log_target_hand_values_and_round_trip() {
    assert_eq!(TargetTransform::Log1p.forward(0.0), 0.0);
    assert!((TargetTransform::Log1p.forward(std::f64::consts::E - 1.0) - 1.0).abs() < 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let y: Vec<f64> = (0..500).map(|_| rng.random_range(0.0..1e3)).collect();
    let z = DVector::from_iterator(y.len(), y.iter().map(|v| TargetTransform::Log1p.forward(*v)));
    let back = inverse_transform(&z);
    for (a, b) in y.iter().zip(back.iter()) {
        assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }
    let cfg = config("target = y");
    let negative = ingest_str("y\n1\n-2\n", &cfg.schema()).unwrap();
    assert!(log_transform_target(&negative).is_err());
}

fn agg_config(aggregates: &str) -> PipelineConfig {
    config(&format!(
        "target = demand\nfold_key = week\ncategorical = g\naggregates = {aggregates}\nlog_target = false"
    ))
}

#[test]
fn out_of_fold_mean_hand_example() {
    let cfg = agg_config("g:mean:demand");
    let table = ingest_str("g,demand,week\nA,2,1\nA,4,1\nA,6,2\n", &cfg.schema()).unwrap();
    let (out, _) = aggregate_group_stats(&table, &cfg).unwrap();
    assert_eq!(numbers(&out, "mean_demand_by_g"), [Some(6.0), Some(6.0), Some(3.0)]);
}

#[test]
fn single_fold_gives_null_aggregates() {
    let cfg = agg_config("g:mean:demand, g:sum:demand");
    let table = ingest_str("g,demand,week\nA,2,1\nA,4,1\nB,6,1\n", &cfg.schema()).unwrap();
    let (out, _) = aggregate_group_stats(&table, &cfg).unwrap();
    assert_eq!(numbers(&out, "mean_demand_by_g"), [None; 3]);
    assert_eq!(numbers(&out, "sum_demand_by_g"), [None; 3]);
}

#[test]
fn sum_over_a_single_other_row_is_that_row() {
    let cfg = agg_config("g:sum:demand");
    let table = ingest_str("g,demand,week\nA,2.5,1\nA,7,2\n", &cfg.schema()).unwrap();
    let (out, _) = aggregate_group_stats(&table, &cfg).unwrap();
    assert_eq!(numbers(&out, "sum_demand_by_g"), [Some(7.0), Some(2.5)]);
}

#[test]
fn unseen_fold_uses_every_fitting_row() {
    let cfg = agg_config("g:mean:demand");
    let train = ingest_str("g,demand,week\nA,2,1\nA,4,2\n", &cfg.schema()).unwrap();
    let test = ingest_str("g,demand,week\nA,0,3\nB,0,3\n", &cfg.schema()).unwrap();
    let lookups = fit_aggregates(&train, &cfg.aggregates).unwrap();
    let out = apply_aggregates(&test, &lookups).unwrap();
    assert_eq!(numbers(&out, "mean_demand_by_g"), [Some(3.0), None]);
}

#[test]
fn finalize_counts_dropped_rows() {
    let cfg = config("target = y\nnumerical = a, b\nlog_target = false");
    let table = ingest_str("a,b,y\n1,2,3\n,2,3\n4,5,6\n7,,8\n9,10,11\n", &cfg.schema()).unwrap();
    let m = finalize_matrix(&table, NullPolicy::Drop).unwrap();
    assert_eq!((m.x.nrows(), m.dropped_rows), (3, 2));
    assert_eq!(m.kept_rows, [0, 2, 4]);
    assert!(finalize_matrix(&table, NullPolicy::Retain).is_err());

    let full = ingest_str("a,b,y\n1,2,3\n4,5,6\n", &cfg.schema()).unwrap();
    let m = finalize_matrix(&full, NullPolicy::Drop).unwrap();
    assert_eq!(m.dropped_rows, 0);
    assert_eq!(m.feature_names, ["a", "b"]);
    assert_eq!(m.x.row(0).iter().copied().collect::<Vec<_>>(), [1.0, 2.0]);
    assert_eq!(m.x.row(1).iter().copied().collect::<Vec<_>>(), [4.0, 5.0]);
    assert_eq!(m.y.as_slice(), [3.0, 6.0]);
}

#[test]
fn split_follows_the_fold_rule() {
    let cfg = config("target = y\nfold_key = week\nnumerical = a\ntrain_folds = 1");
    let mut text = String::from("a,y,week\n");
    for r in 0..40 {
        text.push_str(&format!("{r},{},{}\n", r * 2, r % 4 + 1));
    }
    let table = ingest_str(&text, &cfg.schema()).unwrap();
    let rule = cfg.split.clone().unwrap();
    let (train, test) = split_train_test(&table, &rule).unwrap();
    let weeks = train.column("week").unwrap().as_text().unwrap();
    assert!(weeks.iter().all(|w| w.as_deref() == Some("1")));
    assert_eq!(train.n_rows(), 10);
    assert_eq!(train.n_rows() + test.n_rows(), table.n_rows());
    assert_eq!(split_train_test(&table, &rule).unwrap(), (train, test));
}

#[test]
fn export_and_ingest_round_trip() {
    let cfg = config("target = y\nnumerical = a, b\ncategorical = c\nfold_key = week\nnull_sentinel = NA");
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut text = String::from("a,b,c,y,week\n");
    for _ in 0..100 {
        let a = rng.random_range(-1e3..1e3);
        let b = if rng.random_bool(0.1) { "NA".to_string() } else { format!("{}", rng.random_range(0.0..1.0)) };
        let c = ["x", "y, z", "w\"q"][rng.random_range(0..3)];
        text.push_str(&format!("{a},{b},\"{}\",{},{}\n", c.replace('"', "\"\""), rng.random_range(0..50), rng.random_range(1..5)));
    }
    let table = ingest_str(&text, &cfg.schema()).unwrap();
    assert_eq!(table.n_rows(), 100);
    let exported = export_table(&table, b',').unwrap();
    let again = ingest_str(&exported, &cfg.schema()).unwrap();
    for name in ["a", "b", "y"] {
        for (u, v) in numbers(&table, name).iter().zip(numbers(&again, name)) {
            match (u, v) {
                (Some(u), Some(v)) => assert!((u - v).abs() <= 1e-9 * u.abs().max(1.0)),
                (None, None) => {}
                other => panic!("null mismatch {other:?}"),
            }
        }
    }
    assert_eq!(table.column("c"), again.column("c"));
    assert_eq!(export_table(&again, b',').unwrap(), exported);
}

#[test]
fn identifier_columns_can_be_aggregate_keys_only() {
    let cfg = config(
        "target = demand\nfold_key = week\ncategorical = channel, client\ngroup_only = client\n\
         aggregates = client:mean:demand\nlog_target = false\nnormalization = none",
    );
    let table = ingest_str(
        "channel,client,demand,week\n1,a,2,1\n2,a,4,2\n1,b,6,1\n2,b,8,2\n",
        &cfg.schema(),
    )
    .unwrap();
    let (m, artifact) = fit_pipeline(&table, &cfg).unwrap();
    assert_eq!(m.feature_names, ["mean_demand_by_client", "channel=1", "channel=2"]);
    assert_eq!(artifact.encoding.dropped, ["client"]);
    assert_eq!(m.x.column(0).iter().copied().collect::<Vec<_>>(), [4.0, 2.0, 8.0, 6.0]);
}

#[test]
fn artifact_reapplies_identically() {
    let cfg = config(
        "target = demand\nfold_key = week\nnumerical = price\ncategorical = g\n\
         aggregates = g:mean:demand, g:median:price\ntrain_folds = 1, 2",
    );
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut text = String::from("price,g,demand,week\n");
    for _ in 0..60 {
        text.push_str(&format!(
            "{},{},{},{}\n",
            rng.random_range(1.0..20.0),
            ["p", "q", "r"][rng.random_range(0..3)],
            rng.random_range(0..30),
            rng.random_range(1..4)
        ));
    }
    let table = ingest_str(&text, &cfg.schema()).unwrap();
    let (train, test) = split_train_test(&table, cfg.split.as_ref().unwrap()).unwrap();
    let (m, artifact) = fit_pipeline(&train, &cfg).unwrap();
    let restored = PipelineArtifact::from_json(&artifact.to_json().unwrap()).unwrap();
    assert_eq!(restored, artifact);
    let again = apply_pipeline(&train, &restored).unwrap();
    assert_eq!(again, m);
    let test_m = apply_pipeline(&test, &restored).unwrap();
    assert_eq!(test_m.feature_names, m.feature_names);
}
