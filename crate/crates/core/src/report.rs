//! Analysis reports and their Markdown / CSV / JSON renderings.
//!
//! Rendering is a pure function of the report, so identical analyses give
//! byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attribution::{ClusteringReport, Metric, PcaProjection, SeparationRow};
use crate::harness::AdministerStats;
use crate::ingest::{write_file, IngestError, StudyConfig};
use crate::model::{Direction, Granularity, ValidationReport};
use crate::randomness::{AgreementReport, RandomnessReport};
use crate::scoring::Coverage;
use crate::synthetic::PopulationParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Md,
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "md" | "markdown" => Ok(Format::Md),
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format `{other}` (expected md, csv or json)")),
        }
    }
}

/// What produced a report: enough to re-run it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: StudyConfig,
}

impl Provenance {
    pub fn new(command: &str, config: &StudyConfig) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config: config.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringSection {
    pub granularity: Granularity,
    pub features: usize,
    pub runs: usize,
    pub coverage: Coverage,
}

/// Scores of several models on a few biases, with pairwise separation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationSection {
    pub columns: Vec<String>,
    /// One row per bias: label plus one score per column.
    pub scores: Vec<(String, Vec<f64>)>,
    /// Per column and bias: is the score significantly non-zero?
    pub significant: Vec<Vec<bool>>,
    pub pairs: Vec<SeparationPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationPair {
    pub a: String,
    pub b: String,
    pub rows: Vec<SeparationRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSection {
    pub params: PopulationParams,
    pub clustering: ClusteringReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scoring: Option<ScoringSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub randomness: Option<RandomnessReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clustering: Vec<ClusteringReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pca: Option<PcaProjection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separation: Option<SeparationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub administration: Option<AdministerStats>,
}

impl AnalysisReport {
    pub fn new(provenance: Provenance) -> Self {
        Self {
            provenance,
            validation: None,
            scoring: None,
            randomness: None,
            clustering: Vec::new(),
            pca: None,
            separation: None,
            simulation: None,
            administration: None,
        }
    }
}

// ---------------------------------------------------------------------------
// markdown

fn granularity_name(g: Granularity) -> &'static str {
    match g {
        Granularity::BiasLevel => "Bias-Level",
        Granularity::ScenarioLevel => "Scenario-Level",
    }
}

fn direction_name(d: Direction) -> &'static str {
    match d {
        Direction::Positive => "positive",
        Direction::Neutral => "neutral",
        Direction::Negative => "negative",
    }
}

fn title_bool(b: bool) -> &'static str {
    if b {
        "True"
    } else {
        "False"
    }
}

fn star(b: bool) -> &'static str {
    if b {
        "*"
    } else {
        ""
    }
}

fn clustering_md(out: &mut String, reports: &[ClusteringReport]) {
    out.push_str("## Clustering quality\n\n");
    out.push_str("| Granularity | Clustering |");
    for m in Metric::ALL {
        let arrow = if m.higher_is_better() { "↑" } else { "↓" };
        let _ = write!(out, " {} {arrow} |", m.short_name());
    }
    out.push_str("\n|---|---|---:|---:|---:|---:|---:|\n");
    for rep in reports {
        for row in &rep.rows {
            let _ = write!(out, "| {} | {} |", granularity_name(rep.granularity), row.scheme);
            for m in Metric::ALL {
                let sig = row.quality.significance.map(|s| s.get(m)).unwrap_or(false);
                let _ = write!(out, " {:.3}{} |", row.quality.get(m), star(sig));
            }
            out.push('\n');
        }
    }
    out.push_str("\n`*` beats at least the configured share of label permutations.\n\n");
    for rep in reports {
        let _ = writeln!(
            out,
            "- {}: {} runs x {} features ({} dropped); K-Means run seed {} disagrees with pretraining labels on {} runs (ARI {:.3}).",
            granularity_name(rep.granularity),
            rep.runs.len(),
            rep.features,
            rep.dropped_features,
            rep.kmeans_seed,
            rep.kmeans_disagreements_with_pretraining,
            rep.kmeans_ari_with_pretraining,
        );
    }
    out.push('\n');
}

fn seed_scores_md(out: &mut String, rep: &AgreementReport) {
    let _ = writeln!(out, "### {} seed scores (reference `{}`)\n", rep.group, rep.reference);
    out.push_str("| Bias |");
    let seeds = rep.rows.first().map_or(0, |r| r.seed_scores.len());
    for i in 1..=seeds {
        let _ = write!(out, " {i} |");
    }
    out.push_str(" Mean | Std | Org | Threshold | Seed majority | Org direction |\n|---|");
    out.push_str(&"---:|".repeat(seeds + 4));
    out.push_str("---|---|\n");
    for r in &rep.rows {
        let _ = write!(out, "| {} |", r.bias);
        for s in &r.seed_scores {
            let _ = write!(out, " {s:.2} |");
        }
        let tie = if r.majority.tie { " (tie)" } else { "" };
        let _ = writeln!(
            out,
            " {:.2} | {:.2} | {:.2} | {:.3} | {}{} | {} |",
            r.mean,
            r.std,
            r.reference,
            r.threshold,
            direction_name(r.majority.direction),
            tie,
            direction_name(r.reference_direction),
        );
    }
    out.push('\n');
}

fn agreement_md(out: &mut String, rep: &AgreementReport) {
    let _ = writeln!(out, "### {} vs `{}`\n", rep.group, rep.reference);
    let _ = writeln!(out, "Summary over {} biases; `†` rows are listed but not counted.\n", rep.summary_biases);
    out.push_str("| Bias | Full-FT | Mean | Median | Majority | Agg |\n|---|---:|---:|---:|---|---|\n");
    for r in &rep.rows {
        let _ = writeln!(
            out,
            "| {}{} | {:.2} | {:.2} | {:.2} | {} | {} |",
            r.bias,
            if r.in_summary { "" } else { " †" },
            r.reference,
            r.mean,
            r.median,
            title_bool(r.majority_agree),
            title_bool(r.agg_similar),
        );
    }
    let _ = writeln!(
        out,
        "| Avg Diff | - | {:.2} | {:.2} | {:.2}% | {:.2}% |\n",
        rep.avg_diff_mean, rep.avg_diff_median, rep.majority_pct, rep.agg_pct
    );
}

fn randomness_md(out: &mut String, rep: &RandomnessReport) {
    out.push_str("## Seed randomness\n\n");
    for a in &rep.agreement {
        seed_scores_md(out, a);
    }
    if !rep.variability.is_empty() {
        out.push_str("### Seed variability\n\n| Seed group | Metrics | Count | Mean std |\n|---|---|---:|---:|\n");
        for v in &rep.variability {
            let _ = writeln!(out, "| {} | {} | {} | {:.4} |", v.seed_group, v.metric_group, v.metrics, v.mean_std);
        }
        out.push('\n');
    }
    if !rep.correlations.is_empty() {
        out.push_str(
            "### Reference vs seed mean\n\n| Seed group | Reference | Biases | Pearson r |\n|---|---|---:|---:|\n",
        );
        for c in &rep.correlations {
            let _ = writeln!(out, "| {} | {} | {} | {:.3} |", c.group, c.reference, c.biases, c.pearson);
        }
        out.push('\n');
    }
    for a in &rep.agreement {
        agreement_md(out, a);
    }
}

fn pca_md(out: &mut String, p: &PcaProjection) {
    let _ = writeln!(
        out,
        "## PCA\n\nPC1 explains {:.1}% of variance, PC2 {:.1}%.\n\n| Run | PC1 | PC2 |\n|---|---:|---:|",
        p.explained_variance_ratio[0] * 100.0,
        p.explained_variance_ratio[1] * 100.0
    );
    for (run, c) in p.runs.iter().zip(&p.coords) {
        let _ = writeln!(out, "| {run} | {:.4} | {:.4} |", c[0], c[1]);
    }
    out.push('\n');
}

fn separation_md(out: &mut String, s: &SeparationSection) {
    out.push_str("## Separation\n\n| Bias |");
    for c in &s.columns {
        let _ = write!(out, " {c} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(s.columns.len()));
    out.push('\n');
    for (i, (bias, scores)) in s.scores.iter().enumerate() {
        let _ = write!(out, "| {bias} |");
        for (c, v) in scores.iter().enumerate() {
            let _ = write!(out, " {v:.2}{} |", star(s.significant[c][i]));
        }
        out.push('\n');
    }
    out.push_str("\n`*` significantly different from zero.\n\n| Bias | Pair | Separated |\n|---|---|---|\n");
    for pair in &s.pairs {
        for r in &pair.rows {
            let _ = writeln!(out, "| {} | {} vs {} | {} |", r.bias, pair.a, pair.b, title_bool(r.separated));
        }
    }
    out.push('\n');
}

pub fn to_markdown(report: &AnalysisReport) -> String {
    let mut out = String::new();
    let p = &report.provenance;
    let _ = writeln!(out, "# {} report: `{}`\n", p.tool, p.command);
    let _ = writeln!(
        out,
        "## Provenance\n\n{} {}, command `{}`.\n\n```toml\n{}```\n",
        p.tool,
        p.version,
        p.command,
        p.config.to_toml()
    );
    if let Some(v) = &report.validation {
        let _ = writeln!(out, "## Validation\n\n{} runs, {} records, {} issues.\n", v.runs, v.records, v.issues.len());
        for i in &v.issues {
            let _ = writeln!(out, "- {i}");
        }
        if !v.issues.is_empty() {
            out.push('\n');
        }
    }
    if let Some(s) = &report.scoring {
        let c = &s.coverage;
        let _ = writeln!(
            out,
            "## Scoring\n\n{} features x {} runs ({}).\n\n- scale-pair instances: {} ({} scored, {} non-response, {} unpaired)\n- proportion records: {} ({} non-response)\n",
            s.features,
            s.runs,
            granularity_name(s.granularity),
            c.instances,
            c.scored,
            c.non_response,
            c.unpaired,
            c.proportion_records,
            c.proportion_non_response,
        );
    }
    if let Some(r) = &report.randomness {
        randomness_md(&mut out, r);
    }
    if !report.clustering.is_empty() {
        clustering_md(&mut out, &report.clustering);
    }
    if let Some(p) = &report.pca {
        pca_md(&mut out, p);
    }
    if let Some(s) = &report.separation {
        separation_md(&mut out, s);
    }
    if let Some(sim) = &report.simulation {
        let pp = &sim.params;
        let _ = writeln!(
            out,
            "## Simulation\n\n{} runs per cell, {} features, pretraining effect {}, instruction effect {}, noise {}, seed {}.\n",
            pp.n_per_cell, pp.features, pp.pretrain_effect, pp.instruction_effect, pp.noise_sigma, pp.seed
        );
        clustering_md(&mut out, std::slice::from_ref(&sim.clustering));
    }
    if let Some(a) = &report.administration {
        let _ = writeln!(
            out,
            "## Administration\n\n| Requests | Answered | Non-response | Failed | Malformed | Ambiguous | Retries |\n|---:|---:|---:|---:|---:|---:|---:|\n| {} | {} | {} | {} | {} | {} | {} |\n",
            a.requests, a.answered, a.non_response, a.failed_requests, a.malformed, a.ambiguous, a.retries
        );
    }
    while out.ends_with("\n\n") {
        out.pop();
    }
    out
}

// ---------------------------------------------------------------------------
// csv

fn csv_text(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// CSV tables keyed by file stem. Floats are printed in full precision.
pub fn to_csv_tables(report: &AnalysisReport) -> Vec<(String, String)> {
    let mut out = Vec::new();
    let clustering: Vec<&ClusteringReport> =
        report.clustering.iter().chain(report.simulation.as_ref().map(|s| &s.clustering)).collect();
    if !clustering.is_empty() {
        let mut rows = Vec::new();
        for rep in clustering {
            for row in &rep.rows {
                let mut r = vec![granularity_name(rep.granularity).to_string(), row.scheme.to_string()];
                for m in Metric::ALL {
                    r.push(row.quality.get(m).to_string());
                }
                for m in Metric::ALL {
                    r.push(row.quality.significance.map(|s| s.get(m).to_string()).unwrap_or_default());
                }
                rows.push(r);
            }
        }
        out.push((
            "clustering".into(),
            csv_text(
                &[
                    "granularity",
                    "clustering",
                    "silhouette",
                    "calinski_harabasz",
                    "davies_bouldin",
                    "mean_intra_distance",
                    "mean_inter_distance",
                    "sig_silhouette",
                    "sig_calinski_harabasz",
                    "sig_davies_bouldin",
                    "sig_mean_intra_distance",
                    "sig_mean_inter_distance",
                ],
                rows,
            ),
        ));
    }
    if let Some(r) = &report.randomness {
        let mut rows = Vec::new();
        for a in &r.agreement {
            for row in &a.rows {
                rows.push(vec![
                    a.group.clone(),
                    row.bias.to_string(),
                    row.reference.to_string(),
                    row.mean.to_string(),
                    row.median.to_string(),
                    row.std.to_string(),
                    row.threshold.to_string(),
                    direction_name(row.majority.direction).into(),
                    row.majority.tie.to_string(),
                    row.majority_agree.to_string(),
                    row.agg_similar.to_string(),
                    row.in_summary.to_string(),
                ]);
            }
        }
        out.push((
            "agreement".into(),
            csv_text(
                &[
                    "group",
                    "bias",
                    "reference",
                    "mean",
                    "median",
                    "std",
                    "threshold",
                    "majority",
                    "tie",
                    "majority_agree",
                    "agg_similar",
                    "in_summary",
                ],
                rows,
            ),
        ));
        let rows = r
            .agreement
            .iter()
            .map(|a| {
                vec![
                    a.group.clone(),
                    a.summary_biases.to_string(),
                    a.majority_pct.to_string(),
                    a.agg_pct.to_string(),
                    a.avg_diff_mean.to_string(),
                    a.avg_diff_median.to_string(),
                ]
            })
            .collect();
        out.push((
            "agreement_summary".into(),
            csv_text(&["group", "biases", "majority_pct", "agg_pct", "avg_diff_mean", "avg_diff_median"], rows),
        ));
        let rows = r
            .variability
            .iter()
            .map(|v| vec![v.seed_group.clone(), v.metric_group.clone(), v.metrics.to_string(), v.mean_std.to_string()])
            .collect();
        out.push(("variability".into(), csv_text(&["seed_group", "metric_group", "metrics", "mean_std"], rows)));
        let rows = r
            .correlations
            .iter()
            .map(|c| vec![c.group.clone(), c.reference.clone(), c.biases.to_string(), c.pearson.to_string()])
            .collect();
        out.push(("correlations".into(), csv_text(&["group", "reference", "biases", "pearson"], rows)));
    }
    if let Some(p) = &report.pca {
        let rows = p
            .runs
            .iter()
            .zip(&p.coords)
            .map(|(run, c)| vec![run.clone(), c[0].to_string(), c[1].to_string()])
            .collect();
        out.push(("pca".into(), csv_text(&["run", "pc1", "pc2"], rows)));
    }
    if let Some(s) = &report.separation {
        let rows = s
            .pairs
            .iter()
            .flat_map(|pair| {
                pair.rows.iter().map(move |r| {
                    vec![
                        r.bias.clone(),
                        pair.a.clone(),
                        pair.b.clone(),
                        r.score_a.to_string(),
                        r.score_b.to_string(),
                        r.threshold_a.to_string(),
                        r.threshold_b.to_string(),
                        r.separated.to_string(),
                    ]
                })
            })
            .collect();
        out.push((
            "separation".into(),
            csv_text(&["bias", "a", "b", "score_a", "score_b", "threshold_a", "threshold_b", "separated"], rows),
        ));
    }
    if let Some(v) = &report.validation {
        let rows = v.issues.iter().map(|i| vec![i.to_string()]).collect();
        out.push(("validation".into(), csv_text(&["issue"], rows)));
    }
    if let Some(a) = &report.administration {
        let rows = vec![vec![
            a.requests.to_string(),
            a.answered.to_string(),
            a.non_response.to_string(),
            a.failed_requests.to_string(),
            a.malformed.to_string(),
            a.ambiguous.to_string(),
            a.retries.to_string(),
        ]];
        out.push((
            "administration".into(),
            csv_text(
                &["requests", "answered", "non_response", "failed_requests", "malformed", "ambiguous", "retries"],
                rows,
            ),
        ));
    }
    out.push(("provenance".into(), report.provenance.config.to_toml()));
    out
}

pub fn to_json(report: &AnalysisReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn from_json(text: &str) -> Result<AnalysisReport, serde_json::Error> {
    serde_json::from_str(text)
}

/// Writes the report into `dir` and returns the files written. CSV output
/// is one file per table, plus the embedded config as `provenance.toml`.
pub fn write_report(report: &AnalysisReport, format: Format, dir: &Path) -> Result<Vec<PathBuf>, IngestError> {
    let files: Vec<(PathBuf, String)> = match format {
        Format::Md => vec![(dir.join("report.md"), to_markdown(report))],
        Format::Json => vec![(dir.join("report.json"), to_json(report))],
        Format::Csv => to_csv_tables(report)
            .into_iter()
            .map(|(stem, text)| {
                let ext = if stem == "provenance" { "toml" } else { "csv" };
                (dir.join(format!("{stem}.{ext}")), text)
            })
            .collect(),
    };
    for (path, text) in &files {
        write_file(path, text.as_bytes())?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::{build_bias_vectors, compare_labelings, pca_project, ClusteringOptions, PcaRoute};
    use crate::ingest::bundled;
    use crate::model::ModelRun;

    fn sample() -> AnalysisReport {
        let cfg = StudyConfig::default();
        let m = bundled::combined();
        let runs: Vec<ModelRun> = m.cols().iter().map(|c| ModelRun::from_run_id(c).unwrap()).collect();
        let built = build_bias_vectors(&m).unwrap();
        let mut r = AnalysisReport::new(Provenance::new("cluster", &cfg));
        r.clustering
            .push(compare_labelings(&built, &runs, Granularity::BiasLevel, &ClusteringOptions::default()).unwrap());
        r.pca = Some(pca_project(&built.vectors, PcaRoute::Auto).unwrap());
        r.randomness =
            Some(crate::randomness::analyze(&runs, &m, &cfg.thresholds, cfg.analysis.agreement_scope).unwrap());
        r
    }

    #[test]
    fn markdown_mirrors_table_layout() {
        let md = to_markdown(&sample());
        assert!(md.contains(
            "| Granularity | Clustering | Silhouette ↑ | Calinski. ↑ | Davies. ↓ | Intra D. ↓ | Inter D. ↑ |"
        ));
        assert!(md.contains("| Bias-Level | Pretraining | 0.104*"));
        assert!(md.contains("| Bias | Full-FT | Mean | Median | Majority | Agg |"));
        assert!(md.contains("| Avg Diff | - |"));
        assert!(md.contains("```toml"));
    }

    #[test]
    fn json_round_trip() {
        let r = sample();
        assert_eq!(from_json(&to_json(&r)).unwrap(), r);
    }

    #[test]
    fn rendering_is_deterministic() {
        let (a, b) = (sample(), sample());
        assert_eq!(to_markdown(&a), to_markdown(&b));
        assert_eq!(to_json(&a), to_json(&b));
        assert_eq!(to_csv_tables(&a), to_csv_tables(&b));
    }

    #[test]
    fn writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let r = sample();
        let files = write_report(&r, Format::Csv, dir.path()).unwrap();
        assert!(files.iter().any(|f| f.ends_with("clustering.csv")));
        assert!(files.iter().any(|f| f.ends_with("provenance.toml")));
        let files = write_report(&r, Format::Json, &dir.path().join("nested")).unwrap();
        assert_eq!(from_json(&std::fs::read_to_string(&files[0]).unwrap()).unwrap(), r);
    }

    #[test]
    fn unwritable_path_errors() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        assert!(write_report(&sample(), Format::Md, &blocker.join("sub")).is_err());
    }
}
