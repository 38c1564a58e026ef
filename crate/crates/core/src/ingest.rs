//! File formats: JSONL response logs, score-matrix CSVs, study configs, and
//! the bundled reference tables.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attribution::{PcaRoute, PermutationMode};
use crate::harness::EndpointConfig;
use crate::model::{Granularity, ModelError, ModelRun, Origin, ResponseRecord, ScoreMatrix};
use crate::randomness::{AgreementScope, ThresholdTable};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read `{path}`: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write `{path}`: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON at line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("unknown {field} {value} at line {line}")]
    UnknownValue { field: String, value: String, line: usize },
    #[error("invalid field `{field}` at line {line}: {message}")]
    Field { field: String, line: usize, message: String },
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("CSV has no header row")]
    MissingHeader,
    #[error("cell for feature `{row}`, run `{column}` is not a number: `{value}`")]
    Cell { row: String, column: String, value: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn read_error(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Read { path: path.to_path_buf(), source }
}

fn write_error(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Write { path: path.to_path_buf(), source }
}

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), IngestError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(write_error(path))?;
    }
    fs::write(path, bytes).map_err(write_error(path))
}

// ---------------------------------------------------------------------------
// responses

fn parse_line(text: &str, line: usize) -> Result<ResponseRecord, IngestError> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| IngestError::MalformedLine { line, message: e.to_string() })?;
    serde_path_to_error::deserialize(&value).map_err(|e| {
        let field = e.path().to_string();
        let message = e.inner().to_string();
        let enum_like = matches!(field.as_str(), "condition" | "scale" | "bias");
        if enum_like && message.starts_with("unknown") {
            let raw = value.get(&field).map(|v| v.to_string()).unwrap_or_default();
            IngestError::UnknownValue { field, value: raw, line }
        } else {
            IngestError::Field { field, line, message }
        }
    })
}

/// Parses one record per line. Blank lines are skipped; unknown fields are
/// ignored.
pub fn parse_responses<R: BufRead>(reader: R) -> Result<Vec<ResponseRecord>, IngestError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| IngestError::MalformedLine { line: i + 1, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&line, i + 1)?);
    }
    Ok(out)
}

pub fn read_responses(path: &Path) -> Result<Vec<ResponseRecord>, IngestError> {
    let file = fs::File::open(path).map_err(read_error(path))?;
    let records = parse_responses(BufReader::new(file))?;
    if records.is_empty() {
        log::warn!("`{}` contains no response records", path.display());
    }
    Ok(records)
}

pub fn responses_to_jsonl(records: &[ResponseRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn write_responses(path: &Path, records: &[ResponseRecord]) -> Result<(), IngestError> {
    write_file(path, responses_to_jsonl(records).as_bytes())
}

// ---------------------------------------------------------------------------
// score matrices

/// Scenario-level labels look like `Bias::scenario`.
fn guess_granularity(rows: &[String]) -> Granularity {
    if !rows.is_empty() && rows.iter().all(|r| r.contains("::")) {
        Granularity::ScenarioLevel
    } else {
        Granularity::BiasLevel
    }
}

/// Reads a score-matrix CSV: first column holds feature labels, the header
/// holds run ids, empty cells are missing scores. Granularity is inferred
/// from the labels when not given.
pub fn parse_score_matrix<R: Read>(reader: R, granularity: Option<Granularity>) -> Result<ScoreMatrix, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 2 {
        return Err(IngestError::MissingHeader);
    }
    let cols: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    let mut values = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let label = record.get(0).unwrap_or_default().trim().to_string();
        for (c, cell) in record.iter().skip(1).enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                values.push(None);
            } else {
                let v: f64 = cell.parse().map_err(|_| IngestError::Cell {
                    row: label.clone(),
                    column: cols[c].clone(),
                    value: cell.to_string(),
                })?;
                values.push(Some(v));
            }
        }
        rows.push(label);
    }
    let g = granularity.unwrap_or_else(|| guess_granularity(&rows));
    Ok(ScoreMatrix::new(g, rows, cols, values)?)
}

pub fn read_score_matrix(path: &Path, granularity: Option<Granularity>) -> Result<ScoreMatrix, IngestError> {
    let file = fs::File::open(path).map_err(read_error(path))?;
    parse_score_matrix(file, granularity)
}

/// CSV text of a matrix. `decimals` fixes the printed precision; `None`
/// prints the shortest representation that reads back exactly.
pub fn score_matrix_to_csv(matrix: &ScoreMatrix, decimals: Option<usize>) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let mut header = vec!["feature".to_string()];
    header.extend(matrix.cols().iter().cloned());
    w.write_record(&header).expect("in-memory write");
    for (r, label) in matrix.rows().iter().enumerate() {
        let mut rec = vec![label.clone()];
        for v in matrix.row_values(r) {
            rec.push(match (v, decimals) {
                (None, _) => String::new(),
                (Some(x), Some(d)) => format!("{x:.d$}"),
                (Some(x), None) => format!("{x}"),
            });
        }
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

pub fn write_score_matrix(path: &Path, matrix: &ScoreMatrix, decimals: Option<usize>) -> Result<(), IngestError> {
    let mut bytes = Vec::new();
    bytes.write_all(score_matrix_to_csv(matrix, decimals).as_bytes()).expect("in-memory write");
    write_file(path, &bytes)
}

// ---------------------------------------------------------------------------
// bundled reference data

/// Score tables shipped with the crate: two cross-tuned seed groups per
/// backbone plus each backbone's original finetune, and base-vs-finetuned
/// scores for the separation check.
pub mod bundled {
    use super::*;

    pub const OLMO_CSV: &str = include_str!("../data/olmo_scores.csv");
    pub const T5_CSV: &str = include_str!("../data/t5_scores.csv");
    pub const SEPARATION_CSV: &str = include_str!("../data/separation_scores.csv");

    fn parse(text: &str) -> ScoreMatrix {
        parse_score_matrix(text.as_bytes(), Some(Granularity::BiasLevel)).expect("bundled table parses")
    }

    pub fn olmo() -> ScoreMatrix {
        parse(OLMO_CSV)
    }

    pub fn t5() -> ScoreMatrix {
        parse(T5_CSV)
    }

    /// Both tables side by side (14 runs).
    pub fn combined() -> ScoreMatrix {
        olmo().hconcat(&t5()).expect("bundled tables share rows")
    }

    pub fn separation() -> ScoreMatrix {
        parse(SEPARATION_CSV)
    }
}

// ---------------------------------------------------------------------------
// study config

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyPaths {
    /// JSONL response log.
    pub responses: Option<PathBuf>,
    /// Score-matrix CSVs, concatenated by column. Empty means the bundled tables.
    pub scores: Vec<PathBuf>,
    /// Base-vs-finetuned score CSV for the separation check.
    pub separation: Option<PathBuf>,
    /// JSONL test cases for the harness.
    pub cases: Option<PathBuf>,
    pub granularity: Granularity,
    pub out: Option<PathBuf>,
}

impl Default for StudyPaths {
    fn default() -> Self {
        Self {
            responses: None,
            scores: Vec::new(),
            separation: None,
            cases: None,
            granularity: Granularity::BiasLevel,
            out: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisOptions {
    pub permutations: usize,
    pub level: f64,
    pub permutation_mode: PermutationMode,
    pub kmeans_runs: u32,
    pub random_trials: usize,
    /// Keep original full finetunes in the clustering vectors.
    pub include_originals: bool,
    /// Z-score features before computing distances.
    pub standardize: bool,
    pub agreement_scope: AgreementScope,
    pub pca_route: PcaRoute,
    pub seed: u64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            permutations: 100,
            level: 0.95,
            permutation_mode: PermutationMode::SizePreserving,
            kmeans_runs: 30,
            random_trials: 5,
            include_originals: true,
            standardize: false,
            agreement_scope: AgreementScope::ScalePair,
            pca_route: PcaRoute::Auto,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub study: StudyPaths,
    /// Explicit run roster. Empty means "derive from run ids".
    pub roster: Vec<ModelRun>,
    pub thresholds: ThresholdTable,
    pub analysis: AnalysisOptions,
    pub harness: Option<EndpointConfig>,
}

impl StudyConfig {
    pub fn from_toml(text: &str) -> Result<Self, IngestError> {
        let cfg: StudyConfig = toml::from_str(text).map_err(|e| IngestError::Config(e.to_string()))?;
        for run in &cfg.roster {
            run.check()?;
        }
        Ok(cfg)
    }

    /// Loads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = fs::read_to_string(path).map_err(read_error(path))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let s = &mut cfg.study;
        s.scores.iter_mut().for_each(fix);
        [&mut s.responses, &mut s.separation, &mut s.cases, &mut s.out].into_iter().flatten().for_each(fix);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Score matrix named by the config, or the bundled tables.
    pub fn load_matrix(&self) -> Result<ScoreMatrix, IngestError> {
        let mut it = self.study.scores.iter();
        let Some(first) = it.next() else {
            return Ok(bundled::combined());
        };
        let g = Some(self.study.granularity);
        let mut m = read_score_matrix(first, g)?;
        for p in it {
            m = m.hconcat(&read_score_matrix(p, g)?)?;
        }
        Ok(m)
    }

    /// Roster entries for `run_ids`, in that order. Without an explicit
    /// roster, runs are parsed from their ids. Every id must be covered.
    pub fn roster_for(&self, run_ids: &[String]) -> Result<Vec<ModelRun>, IngestError> {
        if self.roster.is_empty() {
            return run_ids.iter().map(|id| Ok(ModelRun::from_run_id(id)?)).collect();
        }
        run_ids
            .iter()
            .map(|id| {
                self.roster
                    .iter()
                    .find(|r| &r.run_id == id)
                    .cloned()
                    .ok_or_else(|| IngestError::Config(format!("run `{id}` is not in the roster")))
            })
            .collect()
    }
}

/// Runs kept for clustering: all, or all but original full finetunes.
pub fn clustering_runs(runs: &[ModelRun], include_originals: bool) -> Vec<ModelRun> {
    runs.iter().filter(|r| include_originals || r.origin != Origin::OriginalFullFinetune).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BiasId, Condition};

    const LINE: &str = r#"{"run_id":"m-d-s1","bias":"Anchoring","scenario_id":3,"instance_id":0,"condition":"control","scale":"likert7","answer_value":4,"k":1}"#;

    #[test]
    fn three_lines_three_records() {
        let text = format!(
            "{LINE}\n{}\n\n{}\n",
            LINE.replace("control", "treatment"),
            LINE.replace("\"instance_id\":0", "\"instance_id\":1")
        );
        let recs = parse_responses(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[1].condition, Condition::Treatment);
        assert_eq!(recs[0].bias, "Anchoring".parse::<BiasId>().unwrap());
    }

    #[test]
    fn unknown_fields_are_ignored() {
        let text = LINE.replace("\"k\":1", "\"k\":1,\"extra\":true");
        assert_eq!(parse_responses(text.as_bytes()).unwrap().len(), 1);
    }

    #[test]
    fn bad_condition_reports_line() {
        let text = format!("{LINE}\n{}\n", LINE.replace("control", "treat"));
        let err = parse_responses(text.as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.starts_with("unknown condition"), "{msg}");
        assert!(msg.ends_with("at line 2"), "{msg}");
    }

    #[test]
    fn type_mismatch_names_field() {
        let text = LINE.replace("\"scenario_id\":3", "\"scenario_id\":\"three\"");
        let err = parse_responses(text.as_bytes()).unwrap_err();
        assert!(matches!(&err, IngestError::Field { field, line: 1, .. } if field == "scenario_id"), "{err}");
        let err = parse_responses("{not json\n".as_bytes()).unwrap_err();
        assert!(matches!(err, IngestError::MalformedLine { line: 1, .. }));
    }

    #[test]
    fn empty_file_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.jsonl");
        fs::write(&p, "").unwrap();
        assert!(read_responses(&p).unwrap().is_empty());
    }

    #[test]
    fn jsonl_round_trip() {
        let recs = parse_responses(LINE.as_bytes()).unwrap();
        let again = parse_responses(responses_to_jsonl(&recs).as_bytes()).unwrap();
        assert_eq!(recs, again);
    }

    #[test]
    fn bundled_shapes() {
        for m in [bundled::olmo(), bundled::t5()] {
            assert_eq!((m.n_rows(), m.n_cols()), (33, 7));
            assert_eq!(m.rows()[32], "MMLU");
        }
        let all = bundled::combined();
        assert_eq!(all.n_cols(), 14);
        assert_eq!(all.get("Anchoring", "olmo-tulu-s1"), Some(0.14));
        assert_eq!(bundled::separation().get("Certainty", "t5-ft"), Some(0.17));
    }

    #[test]
    fn csv_errors() {
        let out = parse_score_matrix("feature,a\nAnchoring,1.5\n".as_bytes(), None).unwrap_err();
        assert!(matches!(out, IngestError::Model(ModelError::OutOfRange { .. })), "{out}");
        let dup = parse_score_matrix("feature,a\nAnchoring,0.1\nAnchoring,0.2\n".as_bytes(), None).unwrap_err();
        assert!(matches!(dup, IngestError::Model(ModelError::DuplicateFeature(_))));
        let ragged = parse_score_matrix("feature,a,b\nAnchoring,0.1\n".as_bytes(), None);
        assert!(ragged.is_err());
        let bad = parse_score_matrix("feature,a\nAnchoring,x\n".as_bytes(), None).unwrap_err();
        assert!(matches!(bad, IngestError::Cell { .. }));
    }

    #[test]
    fn csv_round_trips() {
        let m = bundled::combined();
        let back = parse_score_matrix(score_matrix_to_csv(&m, Some(2)).as_bytes(), None).unwrap();
        assert_eq!(m, back);
        let fine = ScoreMatrix::new(
            Granularity::ScenarioLevel,
            vec!["Anchoring::0".into(), "Anchoring::1".into()],
            vec!["r".into()],
            vec![Some(0.1 + 0.2), None],
        )
        .unwrap();
        let back = parse_score_matrix(score_matrix_to_csv(&fine, None).as_bytes(), None).unwrap();
        assert_eq!(fine, back);
    }

    #[test]
    fn bundled_csv_text_reproduces() {
        // Re-printing at two decimals gives the shipped file back, apart from
        // signed zeros, which are folded on read.
        let m = bundled::olmo();
        let printed = score_matrix_to_csv(&m, Some(2));
        assert_eq!(printed, bundled::OLMO_CSV.replace(",-0.00", ",0.00"));
    }

    #[test]
    fn config_dotted_keys_and_defaults() {
        let cfg = StudyConfig::from_toml("analysis.permutations = 250\nthresholds.default_n = 500\n").unwrap();
        assert_eq!(cfg.analysis.permutations, 250);
        assert_eq!(cfg.analysis.kmeans_runs, 30);
        assert_eq!(cfg.thresholds.default_n, 500);
        assert_eq!(cfg.thresholds.p, 0.05);
        assert!(StudyConfig::from_toml("analysis.permutatons = 1\n").is_err());
        let back = StudyConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn roster_must_cover_runs() {
        let cfg = StudyConfig::from_toml(
            "[[roster]]\nrun_id = \"a\"\npretrain_id = \"p\"\ninstruction_id = \"d\"\nseed = 1\norigin = \"seeded-replica\"\n",
        )
        .unwrap();
        assert_eq!(cfg.roster_for(&["a".into()]).unwrap().len(), 1);
        assert!(cfg.roster_for(&["b".into()]).is_err());
        let derived = StudyConfig::default().roster_for(&["olmo-tulu-org".into()]).unwrap();
        assert_eq!(derived[0].origin, Origin::OriginalFullFinetune);
    }
}
