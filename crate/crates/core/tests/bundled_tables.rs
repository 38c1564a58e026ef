//! Row-level checks of the bundled score tables against the printed
//! agreement table and the remaining clustering rows.

use biastrace::attribution::{build_bias_vectors, cluster_bias_profile, compare_labelings, ClusteringOptions};
use biastrace::ingest::bundled;
use biastrace::model::{BiasId, Granularity, Labeling, ModelRun, Scheme};
use biastrace::randomness::{analyze, AgreementReport, AgreementScope, ThresholdTable};

struct PrintedRow {
    bias: BiasId,
    full_ft: f64,
    mean: f64,
    median: f64,
    majority: bool,
    agg: bool,
}

/// Printed rows for one group: `offset` 1 is OLMo, 6 is T5.
fn printed(offset: usize) -> Vec<PrintedRow> {
    let text =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/agreement_printed.csv")).unwrap();
    let flag = |s: &str| match s {
        "True" => true,
        "False" => false,
        other => panic!("bad flag {other}"),
    };
    text.lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            PrintedRow {
                bias: f[0].parse().unwrap_or_else(|_| panic!("bias `{}`", f[0])),
                full_ft: f[offset].parse().unwrap(),
                mean: f[offset + 1].parse().unwrap(),
                median: f[offset + 2].parse().unwrap(),
                majority: flag(f[offset + 3]),
                agg: flag(f[offset + 4]),
            }
        })
        .collect()
}

fn reports() -> Vec<AgreementReport> {
    let m = bundled::combined();
    let runs: Vec<ModelRun> = m.cols().iter().map(|c| ModelRun::from_run_id(c).unwrap()).collect();
    analyze(&runs, &m, &ThresholdTable::default(), AgreementScope::ScalePair).unwrap().agreement
}

fn compare(group: &str, offset: usize) -> (usize, usize, Vec<String>) {
    let reps = reports();
    let rep = reps.iter().find(|r| r.group == group).unwrap();
    let rows = printed(offset);
    assert_eq!(rows.len(), 32);
    let mut flag_diffs = Vec::new();
    let mut agree = 0;
    for p in &rows {
        let r = rep.rows.iter().find(|r| r.bias == p.bias).unwrap();
        // reference scores are transcribed directly
        assert!((r.reference - p.full_ft).abs() < 1e-9, "{group} {} reference", p.bias.name());
        // seed scores are printed to two decimals, so mean and median may
        // drift by up to one rounding step on top of their own rounding
        assert!((r.mean - p.mean).abs() <= 0.0101, "{group} {} mean {} vs {}", p.bias.name(), r.mean, p.mean);
        assert!((r.median - p.median).abs() <= 0.0051, "{group} {} median {} vs {}", p.bias.name(), r.median, p.median);
        if r.majority_agree == p.majority && r.agg_similar == p.agg {
            agree += 1;
        } else {
            flag_diffs.push(p.bias.name().to_string());
        }
    }
    (agree, rows.len(), flag_diffs)
}

#[test]
fn olmo_rows_track_printed_table() {
    let (agree, total, diffs) = compare("olmo-tulu", 1);
    eprintln!("olmo-tulu: flags match on {agree}/{total}; differ: {diffs:?}");
    assert!(agree >= total - 2, "too many flag differences: {diffs:?}");
}

#[test]
fn t5_rows_track_printed_table() {
    let (agree, total, diffs) = compare("t5-flan", 6);
    eprintln!("t5-flan: flags match on {agree}/{total}; differ: {diffs:?}");
    assert!(agree >= total - 2, "too many flag differences: {diffs:?}");
}

#[test]
fn remaining_clustering_rows() {
    let m = bundled::combined();
    let runs: Vec<ModelRun> = m.cols().iter().map(|c| ModelRun::from_run_id(c).unwrap()).collect();
    let built = build_bias_vectors(&m).unwrap();
    let rep = compare_labelings(&built, &runs, Granularity::BiasLevel, &ClusteringOptions::default()).unwrap();
    let instr = rep.row(Scheme::Instruction).unwrap();
    let random = rep.row(Scheme::Random).unwrap();
    assert!((instr.silhouette - 0.028).abs() <= 0.03, "instruction silhouette {}", instr.silhouette);
    assert!((random.silhouette - 0.014).abs() <= 0.05, "random silhouette {}", random.silhouette);
    let sig = instr.significance.unwrap();
    assert!(!sig.silhouette && !sig.calinski_harabasz);
}

#[test]
fn framing_splits_the_backbones() {
    let m = bundled::combined();
    let runs: Vec<ModelRun> = m.cols().iter().map(|c| ModelRun::from_run_id(c).unwrap()).collect();
    let v = build_bias_vectors(&m).unwrap().vectors;
    let profile = cluster_bias_profile(&v, &Labeling::by_pretraining(&runs).unwrap()).unwrap();
    let f = profile.features.iter().position(|f| f == "Framing Effect".parse::<BiasId>().unwrap().name()).unwrap();
    let olmo_cluster =
        Labeling::by_pretraining(&runs).unwrap().labels[runs.iter().position(|r| r.pretrain_id == "olmo").unwrap()];
    let olmo = profile.clusters.iter().find(|c| c.cluster == olmo_cluster).unwrap();
    let t5 = profile.clusters.iter().find(|c| c.cluster != olmo_cluster).unwrap();
    eprintln!("Framing means: olmo {:.3}, t5 {:.3}", olmo.means[f], t5.means[f]);
    assert!(olmo.means[f] > t5.means[f]);
}
