use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eer::compute_eer;
use super::trials::{build_trials, score_trials, Condition};
use crate::compensation::{train, EstimatorKind, TrainParams, TrainReport};
use crate::corpus::{pair_utterances, split_loso, Corpus, Mode};
use crate::error::{Error, Result};
use crate::util::derive_seed;

/// EER of one (scenario, condition, estimator) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EerReport {
    /// Non-neutral mode of the scenario, e.g. `shouted`.
    pub scenario: String,
    pub condition: Condition,
    pub estimator: EstimatorKind,
    pub pca_dim: usize,
    pub mixtures: usize,
    pub n_trials: usize,
    pub n_target: usize,
    /// Fraction, not percent.
    pub eer: f64,
    pub threshold: f64,
}

/// Compensated vectors of one fold, keyed by record index.
type FoldUpdates = Vec<(usize, Vec<f64>)>;

/// Outcome of one held-out speaker.
#[derive(Debug, Clone)]
pub struct FoldReport {
    pub speaker: String,
    pub train: TrainReport,
}

/// Compensates every speaker's non-neutral embeddings with a model trained on
/// the other speakers. Normal records and records of other modes are copied
/// unchanged; record order is preserved.
///
/// Folds run in parallel. Fold `i` (in sorted speaker order) trains with EM
/// seed `derive_seed(params.em.seed, i)`, so the result does not depend on
/// scheduling.
pub fn compensate_loso(
    corpus: &Corpus,
    nonneutral_mode: &Mode,
    kind: EstimatorKind,
    params: &TrainParams,
) -> Result<(Corpus, Vec<FoldReport>)> {
    if nonneutral_mode.is_normal() {
        return Err(Error::invalid("the non-neutral mode cannot be \"normal\""));
    }
    let speakers = corpus.speakers();
    if speakers.len() < 2 {
        return Err(Error::invalid(format!(
            "leave-one-speaker-out needs at least 2 speakers, corpus has {}",
            speakers.len()
        )));
    }
    if kind == EstimatorKind::Identity {
        let folds = speakers
            .into_iter()
            .map(|speaker| FoldReport {
                speaker,
                train: TrainReport::default(),
            })
            .collect();
        return Ok((corpus.clone(), folds));
    }

    let folds: Vec<(FoldUpdates, FoldReport)> = speakers
        .par_iter()
        .enumerate()
        .map(|(i, speaker)| {
            run_fold(corpus, nonneutral_mode, kind, params, i, speaker).map_err(|e| Error::Fold {
                speaker: speaker.clone(),
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let mut vectors: Vec<Option<Vec<f64>>> = vec![None; corpus.len()];
    let mut reports = Vec::with_capacity(folds.len());
    for (updates, report) in folds {
        for (idx, v) in updates {
            vectors[idx] = Some(v);
        }
        reports.push(report);
    }
    let out =
        corpus.map_vectors(|i, r| Ok(vectors[i].take().unwrap_or_else(|| r.vector.clone())))?;
    Ok((out, reports))
}

fn run_fold(
    corpus: &Corpus,
    mode: &Mode,
    kind: EstimatorKind,
    params: &TrainParams,
    fold: usize,
    speaker: &str,
) -> Result<(FoldUpdates, FoldReport)> {
    let (train_set, _) = split_loso(corpus, speaker)?;
    let pairs = pair_utterances(&train_set, mode)?;
    let mut p = params.clone();
    p.em.seed = derive_seed(params.em.seed, fold as u64);
    let (model, report) = train(kind, &pairs, &p)?;
    let updates = corpus
        .records()
        .iter()
        .enumerate()
        .filter(|(_, r)| r.speaker_id == speaker && &r.mode == mode)
        .map(|(i, r)| Ok((i, model.compensate(&r.vector)?)))
        .collect::<Result<_>>()?;
    Ok((
        updates,
        FoldReport {
            speaker: speaker.to_owned(),
            train: report,
        },
    ))
}

/// Scores all four conditions on an already compensated corpus.
pub fn evaluate_conditions(
    compensated: &Corpus,
    nonneutral_mode: &Mode,
    kind: EstimatorKind,
    params: &TrainParams,
) -> Result<Vec<EerReport>> {
    Condition::ALL
        .iter()
        .map(|&condition| {
            let trials = build_trials(compensated, condition, nonneutral_mode)?;
            let scores = score_trials(compensated, &trials)?;
            let labels: Vec<bool> = trials.trials.iter().map(|t| t.is_target).collect();
            let e = compute_eer(&scores, &labels)?;
            Ok(EerReport {
                scenario: nonneutral_mode.to_string(),
                condition,
                estimator: kind,
                pca_dim: params.pca_dim,
                mixtures: params.mixtures,
                n_trials: trials.len(),
                n_target: trials.n_target(),
                eer: e.eer,
                threshold: e.threshold,
            })
        })
        .collect()
}

/// Leave-one-speaker-out experiment for one estimator: one report per
/// condition, in [`Condition::ALL`] order.
pub fn run_loso_experiment(
    corpus: &Corpus,
    nonneutral_mode: &Mode,
    kind: EstimatorKind,
    params: &TrainParams,
) -> Result<Vec<EerReport>> {
    let (compensated, _) = compensate_loso(corpus, nonneutral_mode, kind, params)?;
    evaluate_conditions(&compensated, nonneutral_mode, kind, params)
}
