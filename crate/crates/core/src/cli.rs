//! Command-line surface: loads the study, runs the requested analysis and
//! writes the report.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::attribution::{
    self, build_bias_vectors, compare_labelings, pca_project, ClusteringOptions, KMeansConfig, PermutationConfig,
    SampledScore,
};
use crate::harness::{self, HttpBackend, TestCase};
use crate::ingest::{self, clustering_runs, IngestError, StudyConfig};
use crate::model::{
    validate_study, BiasId, Granularity, ModelRun, ScoreMatrix, SignificanceThreshold, ValidationReport,
};
use crate::report::{
    self, AnalysisReport, Format, Provenance, ScoringSection, SeparationPair, SeparationSection, SimulationSection,
};
use crate::synthetic::{generate_population, PopulationParams};
use crate::{randomness, scoring};

#[derive(Debug, Parser)]
#[command(name = "biastrace", version, about = "Seed-variance and cross-tuning analysis of cognitive-bias scores")]
pub struct Cli {
    /// Study config (TOML). Without one, the bundled score tables are used.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory. Without one, the report goes to stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "md", value_parser = ["md", "csv", "json"])]
    pub format: String,
    /// Seed for stochastic steps (permutations, random baseline, simulation).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check study integrity: roster coverage and response pairing.
    Validate {
        #[arg(long)]
        responses: Option<PathBuf>,
    },
    /// Turn a response log into a score matrix.
    Score {
        #[arg(long)]
        responses: Option<PathBuf>,
        #[arg(long, value_parser = ["bias-level", "scenario-level"])]
        granularity: Option<String>,
    },
    /// Seed variability, agreement with the reference model, correlations.
    Randomness,
    /// Compare pretraining / instruction / random / K-Means labelings.
    Cluster,
    /// Two-component PCA projection of the bias vectors.
    Pca,
    /// Flag biases scored significantly and in opposite directions.
    Separation {
        /// Base-vs-finetuned score CSV.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Column pair to compare, as `a,b`; repeatable. Default pairs columns
        /// sharing the same suffix (e.g. `x-ft` with `y-ft`).
        #[arg(long = "pair")]
        pairs: Vec<String>,
    },
    /// Generate a synthetic population with planted effects and cluster it.
    Simulate {
        #[arg(long, default_value_t = 3)]
        n_per_cell: usize,
        #[arg(long, default_value_t = 32)]
        features: usize,
        #[arg(long, default_value_t = 0.3)]
        pretrain_effect: f64,
        #[arg(long, default_value_t = 0.1)]
        instruction_effect: f64,
        #[arg(long, default_value_t = 0.2)]
        noise: f64,
    },
    /// Send test cases to a chat-completion endpoint and log responses.
    Administer {
        #[arg(long)]
        cases: Option<PathBuf>,
        /// Run id written into every record.
        #[arg(long)]
        run_id: String,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate { .. } => "validate",
            Command::Score { .. } => "score",
            Command::Randomness => "randomness",
            Command::Cluster => "cluster",
            Command::Pca => "pca",
            Command::Separation { .. } => "separation",
            Command::Simulate { .. } => "simulate",
            Command::Administer { .. } => "administer",
        }
    }
}

/// Stages that did not complete.
#[derive(Debug, Default)]
pub struct Failure {
    pub stages: Vec<(String, String)>,
}

impl Failure {
    fn single(stage: &str, err: impl fmt::Display) -> Self {
        Self { stages: vec![(stage.to_string(), err.to_string())] }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (stage, msg)) in self.stages.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{stage}: {msg}")?;
        }
        Ok(())
    }
}

fn stage<T, E: fmt::Display>(name: &str, r: Result<T, E>) -> Result<T, Failure> {
    r.map_err(|e| Failure::single(name, e))
}

struct Context {
    config: StudyConfig,
    out: Option<PathBuf>,
    format: Format,
}

impl Context {
    fn matrix(&self) -> Result<ScoreMatrix, Failure> {
        stage("load scores", self.config.load_matrix())
    }

    fn roster(&self, matrix: &ScoreMatrix) -> Result<Vec<ModelRun>, Failure> {
        stage("roster", self.config.roster_for(matrix.cols()))
    }

    fn clustering_options(&self) -> ClusteringOptions {
        let a = &self.config.analysis;
        ClusteringOptions {
            permutation: PermutationConfig {
                permutations: a.permutations,
                level: a.level,
                mode: a.permutation_mode,
                seed: a.seed,
            },
            random_trials: a.random_trials,
            kmeans: KMeansConfig { runs: a.kmeans_runs, ..KMeansConfig::default() },
            standardize: a.standardize,
        }
    }

    /// Matrix restricted to the runs used for clustering, plus their roster.
    fn clustering_input(&self) -> Result<(ScoreMatrix, Vec<ModelRun>), Failure> {
        let m = self.matrix()?;
        let runs = clustering_runs(&self.roster(&m)?, self.config.analysis.include_originals);
        let ids: Vec<String> = runs.iter().map(|r| r.run_id.clone()).collect();
        let m = m.select_cols(&ids).expect("roster ids come from the matrix");
        Ok((m, runs))
    }

    fn emit(&self, report: &AnalysisReport) -> Result<(), Failure> {
        match &self.out {
            Some(dir) => {
                let files = stage("write report", report::write_report(report, self.format, dir))?;
                for f in files {
                    log::info!("wrote {}", f.display());
                }
            }
            None => match self.format {
                Format::Md => print!("{}", report::to_markdown(report)),
                Format::Json => print!("{}", report::to_json(report)),
                Format::Csv => {
                    for (stem, text) in report::to_csv_tables(report) {
                        println!("# {stem}");
                        print!("{text}");
                    }
                }
            },
        }
        Ok(())
    }

    fn write_side_file(&self, name: &str, text: &str) -> Result<(), Failure> {
        if let Some(dir) = &self.out {
            stage("write output", ingest::write_file(&dir.join(name), text.as_bytes()))?;
        }
        Ok(())
    }
}

fn responses_path(flag: Option<PathBuf>, config: &StudyConfig) -> Result<PathBuf, Failure> {
    flag.or_else(|| config.study.responses.clone())
        .ok_or_else(|| Failure::single("responses", "no response log given (--responses or study.responses)"))
}

/// Pairs `x-<suffix>` columns with `y-<suffix>` columns.
fn default_pairs(cols: &[String]) -> Vec<(String, String)> {
    let mut by_suffix: BTreeMap<&str, Vec<&String>> = BTreeMap::new();
    for c in cols {
        let suffix = c.rsplit_once('-').map_or(c.as_str(), |(_, s)| s);
        by_suffix.entry(suffix).or_default().push(c);
    }
    let mut pairs = Vec::new();
    for c in cols {
        let suffix = c.rsplit_once('-').map_or(c.as_str(), |(_, s)| s);
        let group = &by_suffix[suffix];
        if group.len() == 2 && group[0] == c {
            pairs.push((group[0].clone(), group[1].clone()));
        }
    }
    pairs
}

fn separation_section(
    matrix: &ScoreMatrix,
    pairs: &[(String, String)],
    thresholds: &randomness::ThresholdTable,
) -> Result<SeparationSection, Failure> {
    let threshold = |label: &str| -> Result<SignificanceThreshold, Failure> {
        let n = label.parse::<BiasId>().map_or(thresholds.default_n, |b| thresholds.n_for(b));
        stage("separation", SignificanceThreshold::derive(n, thresholds.sigma, thresholds.p))
    };
    let mut scores = Vec::new();
    let mut significant = vec![Vec::new(); matrix.n_cols()];
    for (r, label) in matrix.rows().iter().enumerate() {
        let t = threshold(label)?;
        let row: Vec<f64> = matrix.row_values(r).iter().map(|v| v.unwrap_or(0.0)).collect();
        for (c, v) in matrix.row_values(r).iter().enumerate() {
            significant[c].push(v.is_some_and(|x| t.is_significant(x)));
        }
        scores.push((label.clone(), row));
    }
    let sampled = |col: &str| -> Result<Vec<SampledScore>, Failure> {
        let c = matrix.col_index(col).ok_or_else(|| Failure::single("separation", format!("no column `{col}`")))?;
        Ok(matrix
            .rows()
            .iter()
            .enumerate()
            .filter_map(|(r, label)| {
                let n = label.parse::<BiasId>().map_or(thresholds.default_n, |b| thresholds.n_for(b));
                matrix.at(r, c).map(|score| SampledScore { bias: label.clone(), score, n })
            })
            .collect())
    };
    let mut out_pairs = Vec::new();
    for (a, b) in pairs {
        let rows = stage(
            "separation",
            attribution::separation_check(&sampled(a)?, &sampled(b)?, thresholds.sigma, thresholds.p),
        )?;
        out_pairs.push(SeparationPair { a: a.clone(), b: b.clone(), rows });
    }
    Ok(SeparationSection { columns: matrix.cols().to_vec(), scores, significant, pairs: out_pairs })
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let mut config = match &cli.config {
        Some(p) => stage("config", StudyConfig::load(p))?,
        None => StudyConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.analysis.seed = seed;
    }
    let ctx = Context {
        out: cli.out.clone().or_else(|| config.study.out.clone()),
        format: cli.format.parse().expect("clap restricts the value"),
        config,
    };
    let mut report = AnalysisReport::new(Provenance::new(cli.command.name(), &ctx.config));
    let mut failure = Failure::default();

    match cli.command {
        Command::Validate { responses } => {
            let validation = match responses.or_else(|| ctx.config.study.responses.clone()) {
                Some(path) => {
                    let records = stage("read responses", ingest::read_responses(&path))?;
                    let ids: Vec<String> =
                        records.iter().map(|r| r.run_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
                    let runs = stage("roster", ctx.config.roster_for(&ids))?;
                    validate_study(&runs, &records)
                }
                None => {
                    let m = ctx.matrix()?;
                    match ctx.config.roster_for(m.cols()) {
                        Ok(runs) => ValidationReport { runs: runs.len(), records: 0, issues: Vec::new() },
                        Err(e) => return Err(Failure::single("roster", e)),
                    }
                }
            };
            if !validation.is_clean() {
                failure.stages.push(("validate".into(), format!("{} issues found", validation.issues.len())));
            }
            report.validation = Some(validation);
        }
        Command::Score { responses, granularity } => {
            let path = responses_path(responses, &ctx.config)?;
            let records = stage("read responses", ingest::read_responses(&path))?;
            let g = match granularity.as_deref() {
                Some("scenario-level") => Granularity::ScenarioLevel,
                Some(_) => Granularity::BiasLevel,
                None => ctx.config.study.granularity,
            };
            let scores = stage("score", scoring::score_study(&records, g))?;
            ctx.write_side_file("scores.csv", &ingest::score_matrix_to_csv(&scores.matrix, None))?;
            report.scoring = Some(ScoringSection {
                granularity: g,
                features: scores.matrix.n_rows(),
                runs: scores.matrix.n_cols(),
                coverage: scores.coverage,
            });
        }
        Command::Randomness => {
            let m = ctx.matrix()?;
            let runs = ctx.roster(&m)?;
            let r = randomness::analyze(&runs, &m, &ctx.config.thresholds, ctx.config.analysis.agreement_scope);
            match r {
                Ok(r) => report.randomness = Some(r),
                Err(e) => failure.stages.push(("randomness".into(), e.to_string())),
            }
        }
        Command::Cluster => {
            let (m, runs) = ctx.clustering_input()?;
            let built = stage("bias vectors", build_bias_vectors(&m))?;
            let rep = stage("cluster", compare_labelings(&built, &runs, m.granularity(), &ctx.clustering_options()))?;
            report.clustering.push(rep);
        }
        Command::Pca => {
            let (m, _) = ctx.clustering_input()?;
            let built = stage("bias vectors", build_bias_vectors(&m))?;
            let vectors = if ctx.config.analysis.standardize { built.vectors.standardized() } else { built.vectors };
            report.pca = Some(stage("pca", pca_project(&vectors, ctx.config.analysis.pca_route))?);
        }
        Command::Separation { scores, pairs } => {
            let m = match scores.or_else(|| ctx.config.study.separation.clone()) {
                Some(p) => stage("load scores", ingest::read_score_matrix(&p, Some(Granularity::BiasLevel)))?,
                None => ingest::bundled::separation(),
            };
            let pairs: Vec<(String, String)> = if pairs.is_empty() {
                default_pairs(m.cols())
            } else {
                pairs
                    .iter()
                    .map(|p| {
                        p.split_once(',')
                            .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
                            .ok_or_else(|| Failure::single("separation", format!("pair `{p}` is not `a,b`")))
                    })
                    .collect::<Result<_, _>>()?
            };
            report.separation = Some(separation_section(&m, &pairs, &ctx.config.thresholds)?);
        }
        Command::Simulate { n_per_cell, features, pretrain_effect, instruction_effect, noise } => {
            if pretrain_effect < 0.0 || instruction_effect < 0.0 || noise < 0.0 {
                return Err(Failure::single("simulate", "effects and noise must be non-negative"));
            }
            let params = PopulationParams {
                n_per_cell,
                features,
                pretrain_effect,
                instruction_effect,
                noise_sigma: noise,
                seed: ctx.config.analysis.seed,
            };
            let pop = generate_population(&params);
            ctx.write_side_file("population.csv", &ingest::score_matrix_to_csv(&pop.matrix, None))?;
            let built = stage("bias vectors", build_bias_vectors(&pop.matrix))?;
            let clustering = stage(
                "cluster",
                compare_labelings(&built, &pop.runs, pop.matrix.granularity(), &ctx.clustering_options()),
            )?;
            report.simulation = Some(SimulationSection { params, clustering });
        }
        Command::Administer { cases, run_id } => {
            let path = cases
                .or_else(|| ctx.config.study.cases.clone())
                .ok_or_else(|| Failure::single("administer", "no case file given (--cases or study.cases)"))?;
            let cases = stage("read cases", read_cases(&path))?;
            let endpoint = ctx.config.harness.clone().unwrap_or_default();
            let backend = stage("administer", HttpBackend::new(&endpoint))?;
            let out = stage("administer", harness::administer_blocking(&cases, &run_id, &backend, &endpoint))?;
            ctx.write_side_file("responses.jsonl", &ingest::responses_to_jsonl(&out.records))?;
            if ctx.out.is_none() {
                log::warn!("no --out directory; collected records are not saved");
            }
            report.administration = Some(out.stats);
        }
    }

    ctx.emit(&report)?;
    if failure.stages.is_empty() {
        Ok(())
    } else {
        Err(failure)
    }
}

/// Reads JSONL test cases.
pub fn read_cases(path: &Path) -> Result<Vec<TestCase>, IngestError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| IngestError::Read { path: path.to_path_buf(), source })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| IngestError::MalformedLine { line: i + 1, message: e.to_string() })
        })
        .collect()
}

/// Parses `args` and runs the command. Usage errors come back as clap
/// errors; analysis errors as a list of failed stages.
pub fn run<I, T>(args: I) -> Result<Result<(), Failure>, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    Ok(execute(cli))
}
