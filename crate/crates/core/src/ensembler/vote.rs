use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::normalize::{normalize_with, NormalizedAnswer, UnitTable};
use crate::answerer::AnswerRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteMode {
    Independent,
    #[default]
    AnswerPriority,
    RefPriority,
    Union,
    Intersection,
}

impl VoteMode {
    pub const ALL: [VoteMode; 5] =
        [VoteMode::Independent, VoteMode::AnswerPriority, VoteMode::RefPriority, VoteMode::Union, VoteMode::Intersection];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteConfig {
    pub mode: VoteMode,
    pub ignore_blank: bool,
}

impl Default for VoteConfig {
    fn default() -> Self {
        Self { mode: VoteMode::AnswerPriority, ignore_blank: true }
    }
}

/// Groups run indices by answer, in order of each group's earliest run.
/// Numbers are joined by single linkage: a chain of pairwise-close values
/// forms one group even if its ends are far apart.
pub fn group_answers(answers: &[(usize, NormalizedAnswer)]) -> Vec<Vec<usize>> {
    let n = answers.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for i in 0..n {
        for j in i + 1..n {
            if answers[i].1.matches(&answers[j].1) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                // the smaller position stays the root so groups order by first member
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot: Vec<Option<usize>> = vec![None; n];
    for (i, (run, _)) in answers.iter().enumerate() {
        let root = find(&mut parent, i);
        match slot[root] {
            Some(g) => groups[g].push(*run),
            None => {
                slot[root] = Some(groups.len());
                groups.push(vec![*run]);
            }
        }
    }
    groups
}

/// Largest group; ties go to the group whose earliest run comes first.
fn plurality(groups: &[Vec<usize>]) -> Option<&Vec<usize>> {
    groups.iter().min_by(|a, b| b.len().cmp(&a.len()).then_with(|| a[0].cmp(&b[0])))
}

/// Most frequent exact reference set among `runs`; ties by earliest run.
fn majority_ref_set(records: &[AnswerRecord], runs: &[usize]) -> BTreeSet<String> {
    let mut tallies: Vec<(&BTreeSet<String>, usize, usize)> = Vec::new();
    for &r in runs {
        let set = &records[r].ref_id;
        match tallies.iter_mut().find(|(s, _, _)| *s == set) {
            Some(t) => t.1 += 1,
            None => tallies.push((set, 1, r)),
        }
    }
    tallies
        .into_iter()
        .min_by(|a, b| b.1.cmp(&a.1).then_with(|| a.2.cmp(&b.2)))
        .map(|(s, _, _)| s.clone())
        .unwrap_or_default()
}

pub fn vote(records: &[AnswerRecord], cfg: &VoteConfig) -> AnswerRecord {
    vote_with(records, cfg, &UnitTable::default())
}

/// Aggregates runs into one record.
///
/// With `ignore_blank`, abstentions are dropped whenever some run answered.
/// The answer is the plurality group of normalized answers; the returned
/// record is that group's earliest run with references chosen by the mode.
pub fn vote_with(records: &[AnswerRecord], cfg: &VoteConfig, units: &UnitTable) -> AnswerRecord {
    let normalized: Vec<NormalizedAnswer> = records.iter().map(|r| normalize_with(r, units)).collect();
    let any_answer = normalized.iter().any(|n| !n.is_blank());
    if !any_answer {
        return AnswerRecord::blank();
    }
    let surviving: Vec<usize> =
        (0..records.len()).filter(|&i| !(cfg.ignore_blank && normalized[i].is_blank())).collect();

    let candidates: Vec<usize> = if cfg.mode == VoteMode::RefPriority {
        let winning_set = majority_ref_set(records, &surviving);
        surviving.iter().copied().filter(|&i| records[i].ref_id == winning_set).collect()
    } else {
        surviving.clone()
    };
    let keyed: Vec<(usize, NormalizedAnswer)> = candidates.iter().map(|&i| (i, normalized[i].clone())).collect();
    let groups = group_answers(&keyed);
    let Some(winner) = plurality(&groups) else { return AnswerRecord::blank() };
    let representative = winner[0];
    if normalized[representative].is_blank() {
        return AnswerRecord::blank();
    }

    let refs = match cfg.mode {
        VoteMode::AnswerPriority | VoteMode::RefPriority => majority_ref_set(records, winner),
        VoteMode::Union => winner.iter().flat_map(|&i| records[i].ref_id.iter().cloned()).collect(),
        VoteMode::Intersection => {
            let mut it = winner.iter().map(|&i| records[i].ref_id.clone());
            let first = it.next().unwrap_or_default();
            it.fold(first, |acc, s| acc.intersection(&s).cloned().collect())
        }
        VoteMode::Independent => {
            let all: BTreeSet<&String> = surviving.iter().flat_map(|&i| records[i].ref_id.iter()).collect();
            all.into_iter()
                .filter(|r| 2 * surviving.iter().filter(|&&i| records[i].ref_id.contains(*r)).count() > surviving.len())
                .cloned()
                .collect()
        }
    };
    AnswerRecord { ref_id: refs, ..records[representative].clone() }.normalized()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::answerer::AnswerValue;

    fn text(a: &str, refs: &[&str]) -> AnswerRecord {
        AnswerRecord::answered(a, AnswerValue::Text(a.into()), refs)
    }

    fn number(x: f64, refs: &[&str]) -> AnswerRecord {
        AnswerRecord::answered(&x.to_string(), AnswerValue::Number(x), refs)
    }

    fn on() -> VoteConfig {
        VoteConfig::default()
    }

    #[test]
    fn blank_filtering_case() {
        let runs = [text("a", &[]), text("a", &[]), AnswerRecord::blank(), text("b", &[]), text("a", &[])];
        assert_eq!(vote(&runs, &on()).answer, "a");
        let all_blank = vec![AnswerRecord::blank(); 5];
        assert!(vote(&all_blank, &on()).is_blank);
    }

    #[test]
    fn blank_wins_without_filter() {
        let runs = [text("a", &["x"]), AnswerRecord::blank(), AnswerRecord::blank()];
        let off = VoteConfig { ignore_blank: false, ..on() };
        assert!(vote(&runs, &off).is_blank);
        assert_eq!(vote(&runs, &on()).answer, "a");
    }

    #[test]
    fn numeric_grouping() {
        let runs = [number(100.0, &[]), number(100.05, &[]), number(200.0, &[])];
        let out = vote(&runs, &on());
        assert_eq!(out.answer_value, Some(AnswerValue::Number(100.0)));
        // single linkage joins a chain whose ends differ by more than the tolerance
        let chain: Vec<(usize, NormalizedAnswer)> =
            [100.0, 100.09, 100.18].iter().enumerate().map(|(i, &x)| (i, NormalizedAnswer::Numeric(x))).collect();
        assert_eq!(group_answers(&chain), vec![vec![0, 1, 2]]);
        let split: Vec<(usize, NormalizedAnswer)> =
            [100.0, 100.18].iter().enumerate().map(|(i, &x)| (i, NormalizedAnswer::Numeric(x))).collect();
        assert_eq!(group_answers(&split).len(), 2);
    }

    #[test]
    fn ties_go_to_earliest_run() {
        let runs = [text("b", &[]), text("a", &[]), text("a", &[]), text("b", &[])];
        assert_eq!(vote(&runs, &on()).answer, "b");
    }

    #[test]
    fn reference_modes() {
        let runs = [
            text("a", &["d1", "d2"]),
            text("a", &["d1"]),
            text("a", &["d1", "d2"]),
            text("b", &["d3"]),
            text("b", &["d3"]),
        ];
        let with = |mode| vote(&runs, &VoteConfig { mode, ignore_blank: true });
        let set = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
        assert_eq!(with(VoteMode::AnswerPriority).ref_id, set(&["d1", "d2"]));
        assert_eq!(with(VoteMode::Union).ref_id, set(&["d1", "d2"]));
        assert_eq!(with(VoteMode::Intersection).ref_id, set(&["d1"]));
        // d1 appears in 3 of 5 runs, d2 in 2, d3 in 2
        let ind = with(VoteMode::Independent);
        assert_eq!(ind.answer, "a");
        assert_eq!(ind.ref_id, set(&["d1"]));
        // {d1,d2} and {d3} both have 2 votes; the earlier one wins
        let rp = with(VoteMode::RefPriority);
        assert_eq!((rp.answer.as_str(), rp.ref_id.clone()), ("a", set(&["d1", "d2"])));
    }

    #[test]
    fn ref_priority_picks_answer_within_set() {
        let runs = [text("x", &["d9"]), text("y", &["d1"]), text("z", &["d1"]), text("z", &["d1"])];
        let out = vote(&runs, &VoteConfig { mode: VoteMode::RefPriority, ignore_blank: true });
        assert_eq!(out.answer, "z");
        assert_eq!(out.ref_id.iter().collect::<Vec<_>>(), vec!["d1"]);
    }

    #[test]
    fn idempotent_for_copies() {
        let rec = text("Yes", &["d1", "d2"]);
        for mode in VoteMode::ALL {
            for ignore_blank in [true, false] {
                assert_eq!(vote(&vec![rec.clone(); 3], &VoteConfig { mode, ignore_blank }), rec);
            }
        }
    }
}
