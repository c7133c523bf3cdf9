//! Multi-run answer aggregation.

mod normalize;
mod vote;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::answerer::{answer_with_retry, AnswerConfig, AnswerError, AnswerRecord, AttemptLog, ChatClient, RetrievalSession};

pub use normalize::{
    categorical_key, normalize_answer, normalize_text, normalize_with, numbers_close, parse_numeric, NormalizedAnswer,
    UnitTable, NUMERIC_TOLERANCE,
};
pub use vote::{group_answers, vote, vote_with, VoteConfig, VoteMode};

/// Seed for one run, expanded from the root seed so runs differ but
/// reproduce.
pub fn run_seed(root: u64, question_id: &str, run: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update((question_id.len() as u64).to_le_bytes());
    h.update(question_id.as_bytes());
    h.update((run as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub run: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<AnswerRecord>,
    pub attempts: Vec<AttemptLog>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOutcome {
    pub record: AnswerRecord,
    pub runs: Vec<RunOutcome>,
}

/// Runs `m` independent answer attempts (each with its own retry loop and
/// seed) and votes. A single run is returned as is. Failed runs are left
/// out of the vote; only when every run fails is an error returned.
#[allow(clippy::too_many_arguments)]
pub fn run_ensemble(
    question_id: &str,
    m: usize,
    session: &RetrievalSession<'_>,
    chat: &dyn ChatClient,
    answer_cfg: &AnswerConfig,
    vote_cfg: &VoteConfig,
    units: &UnitTable,
    root_seed: u64,
) -> Result<EnsembleOutcome, AnswerError> {
    let m = m.max(1);
    let results: Vec<(u64, Result<_, AnswerError>)> = (0..m)
        .into_par_iter()
        .map(|run| {
            let seed = run_seed(root_seed, question_id, run);
            (seed, answer_with_retry(question_id, session, chat, answer_cfg, run, Some(seed)))
        })
        .collect();

    let mut runs = Vec::with_capacity(m);
    let mut records = Vec::with_capacity(m);
    let mut first_error = None;
    for (run, (seed, result)) in results.into_iter().enumerate() {
        match result {
            Ok(outcome) => {
                records.push(outcome.record.clone());
                runs.push(RunOutcome { run, seed, record: Some(outcome.record), attempts: outcome.attempts, error: None });
            }
            Err(e) => {
                tracing::warn!(question_id, run, "run failed: {e}");
                runs.push(RunOutcome { run, seed, record: None, attempts: Vec::new(), error: Some(e.to_string()) });
                first_error.get_or_insert(e);
            }
        }
    }
    let record = match (records.len(), first_error) {
        (0, Some(e)) => return Err(e),
        (1, _) if m == 1 => records.remove(0),
        _ => vote_with(&records, vote_cfg, units),
    };
    Ok(EnsembleOutcome { record, runs })
}
