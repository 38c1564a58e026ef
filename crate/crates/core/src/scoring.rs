//! Bias scores from paired control/treatment responses.
//!
//! Scale-pair biases are scored per instance with the normalized difference
//! `k * (a1 - a2) / max(a1, a2)` (a1 = control answer, a2 = treatment answer) and
//! averaged up to scenario and bias level. Proportion biases compare the rate
//! of picking a target option between the treatment and control groups.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    scenario_label, BiasId, BiasKind, Condition, Granularity, InstanceKey, ModelError, Orientation, ResponseRecord,
    ScoreMatrix,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("answers must be non-negative (a1={a1}, a2={a2})")]
    NegativeAnswer { a1: f64, a2: f64 },
    #[error("no {0} records with an answer")]
    EmptyGroup(Condition),
    #[error("records for one proportion score span several runs or biases")]
    MixedGroup,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Normalized control/treatment difference in [-1, 1]. Both answers at zero score 0.
pub fn score_scale_pair(a1: f64, a2: f64, k: Orientation) -> Result<f64, ScoringError> {
    if !(a1 >= 0.0 && a2 >= 0.0) {
        return Err(ScoringError::NegativeAnswer { a1, a2 });
    }
    let max = a1.max(a2);
    if max == 0.0 {
        return Ok(0.0);
    }
    Ok(k.sign() * (a1 - a2) / max)
}

/// Treatment rate of choosing `target` minus the control rate.
///
/// Non-responses are ignored. All records must belong to the same run and bias.
pub fn score_proportion(records: &[ResponseRecord], target: &str) -> Result<f64, ScoringError> {
    if let Some(first) = records.first() {
        if records.iter().any(|r| r.run_id != first.run_id || r.bias != first.bias) {
            return Err(ScoringError::MixedGroup);
        }
    }
    let mut hits = [0usize; 2];
    let mut totals = [0usize; 2];
    for rec in records {
        let Some(answer) = &rec.answer_option else { continue };
        let slot = rec.condition as usize;
        totals[slot] += 1;
        if answer == target {
            hits[slot] += 1;
        }
    }
    let (c, t) = (Condition::Control as usize, Condition::Treatment as usize);
    if totals[t] == 0 {
        return Err(ScoringError::EmptyGroup(Condition::Treatment));
    }
    if totals[c] == 0 {
        return Err(ScoringError::EmptyGroup(Condition::Control));
    }
    Ok(hits[t] as f64 / totals[t] as f64 - hits[c] as f64 / totals[c] as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceScore {
    pub run_id: String,
    pub bias: BiasId,
    pub scenario_id: u32,
    pub instance_id: u32,
    pub score: f64,
}

/// How many instances made it into the scores.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub instances: usize,
    pub scored: usize,
    pub non_response: usize,
    pub unpaired: usize,
    pub proportion_records: usize,
    pub proportion_non_response: usize,
}

impl Coverage {
    pub fn rate(&self) -> f64 {
        if self.instances == 0 {
            return 0.0;
        }
        self.scored as f64 / self.instances as f64
    }
}

/// Pairs control and treatment answers per instance and scores every
/// scale-pair instance. Proportion-bias records are only counted here.
pub fn score_instances(records: &[ResponseRecord]) -> (Vec<InstanceScore>, Coverage) {
    let mut pairs: BTreeMap<InstanceKey, [Option<&ResponseRecord>; 2]> = BTreeMap::new();
    let mut coverage = Coverage::default();
    for rec in records {
        if rec.bias.kind() == BiasKind::Proportion {
            coverage.proportion_records += 1;
            if !rec.is_response() {
                coverage.proportion_non_response += 1;
            }
            continue;
        }
        let slot = &mut pairs.entry(rec.instance_key()).or_default()[rec.condition as usize];
        // first record wins; duplicates are a validation issue
        slot.get_or_insert(rec);
    }

    let mut scores = Vec::new();
    for (key, [control, treatment]) in pairs {
        coverage.instances += 1;
        let (Some(control), Some(treatment)) = (control, treatment) else {
            coverage.unpaired += 1;
            continue;
        };
        let (Some(a1), Some(a2)) = (control.answer_value, treatment.answer_value) else {
            coverage.non_response += 1;
            continue;
        };
        match score_scale_pair(a1, a2, control.k) {
            Ok(score) => {
                coverage.scored += 1;
                scores.push(InstanceScore {
                    run_id: key.run_id,
                    bias: key.bias,
                    scenario_id: key.scenario_id,
                    instance_id: key.instance_id,
                    score,
                });
            }
            Err(_) => coverage.non_response += 1,
        }
    }
    (scores, coverage)
}

/// Means instance scores into a score matrix.
///
/// Rows follow catalog order (then scenario id); columns are sorted run ids.
/// Groups with no instances stay missing.
pub fn aggregate_scores(scores: &[InstanceScore], granularity: Granularity) -> Result<ScoreMatrix, ScoringError> {
    type Cell<'a> = (BiasId, Option<u32>, &'a str);
    let mut cells: BTreeMap<Cell, (f64, usize)> = BTreeMap::new();
    for s in scores {
        let scenario = match granularity {
            Granularity::BiasLevel => None,
            Granularity::ScenarioLevel => Some(s.scenario_id),
        };
        let cell = cells.entry((s.bias, scenario, s.run_id.as_str())).or_insert((0.0, 0));
        cell.0 += s.score;
        cell.1 += 1;
    }
    build_matrix(granularity, cells.into_iter().map(|(k, (sum, n))| (k, sum / n as f64)))
}

fn build_matrix<'a>(
    granularity: Granularity,
    cells: impl Iterator<Item = ((BiasId, Option<u32>, &'a str), f64)>,
) -> Result<ScoreMatrix, ScoringError> {
    let cells: Vec<_> = cells.collect();
    let mut rows: Vec<(BiasId, Option<u32>)> = cells.iter().map(|((b, s, _), _)| (*b, *s)).collect();
    rows.sort();
    rows.dedup();
    let mut cols: Vec<&str> = cells.iter().map(|((_, _, r), _)| *r).collect();
    cols.sort();
    cols.dedup();
    let mut values = vec![None; rows.len() * cols.len()];
    for ((b, s, r), v) in &cells {
        let ri = rows.binary_search(&(*b, *s)).expect("row present");
        let ci = cols.binary_search(r).expect("col present");
        values[ri * cols.len() + ci] = Some(v.clamp(-1.0, 1.0));
    }
    let labels = rows
        .iter()
        .map(|(b, s)| match s {
            Some(s) => scenario_label(*b, *s),
            None => b.name().to_string(),
        })
        .collect();
    Ok(ScoreMatrix::new(granularity, labels, cols.into_iter().map(String::from).collect(), values)?)
}

/// Scores from a whole response log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyScores {
    pub matrix: ScoreMatrix,
    pub coverage: Coverage,
}

/// Scores a response log end to end: scale-pair biases via instance pairing,
/// proportion biases per (run, bias) group. Proportion biases only appear at
/// bias level since they have no scenario structure.
pub fn score_study(records: &[ResponseRecord], granularity: Granularity) -> Result<StudyScores, ScoringError> {
    let (instance_scores, coverage) = score_instances(records);

    type Cell<'a> = (BiasId, Option<u32>, &'a str);
    let mut cells: BTreeMap<Cell, (f64, usize)> = BTreeMap::new();
    for s in &instance_scores {
        let scenario = (granularity == Granularity::ScenarioLevel).then_some(s.scenario_id);
        let cell = cells.entry((s.bias, scenario, s.run_id.as_str())).or_insert((0.0, 0));
        cell.0 += s.score;
        cell.1 += 1;
    }
    let mut means: Vec<(Cell, f64)> = cells.into_iter().map(|(k, (sum, n))| (k, sum / n as f64)).collect();

    if granularity == Granularity::BiasLevel {
        let mut groups: BTreeMap<(&str, BiasId), Vec<ResponseRecord>> = BTreeMap::new();
        for rec in records.iter().filter(|r| r.bias.kind() == BiasKind::Proportion) {
            groups.entry((rec.run_id.as_str(), rec.bias)).or_default().push(rec.clone());
        }
        for ((run, bias), recs) in groups {
            let Some(target) = recs.iter().find_map(|r| r.target_option.clone()) else {
                log::warn!("no target option for run `{run}`, bias `{bias}`; skipped");
                continue;
            };
            match score_proportion(&recs, &target) {
                Ok(score) => means.push(((bias, None, run), score)),
                Err(e) => log::warn!("run `{run}`, bias `{bias}`: {e}; left missing"),
            }
        }
    }
    Ok(StudyScores { matrix: build_matrix(granularity, means.into_iter())?, coverage })
}
