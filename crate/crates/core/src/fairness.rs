//! Per-group accuracy and the L1 unfairness score.

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub predicted_class: i64,
    pub true_class: i64,
    pub group_id: usize,
}

impl Outcome {
    pub fn correct(&self) -> bool {
        self.predicted_class == self.true_class
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledOutcomes {
    pub records: Vec<Outcome>,
    pub num_groups: usize,
}

impl LabeledOutcomes {
    pub fn new(records: Vec<Outcome>, num_groups: usize) -> Self {
        LabeledOutcomes {
            records,
            num_groups,
        }
    }

    /// Reads one JSON `Outcome` per line. The group count is the largest id plus one.
    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let records: Vec<Outcome> = read_jsonl(path)?;
        let num_groups = records.iter().map(|r| r.group_id + 1).max().unwrap_or(0);
        Ok(LabeledOutcomes {
            records,
            num_groups,
        })
    }
}

/// Overall accuracy with its per-group breakdown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupedAccuracy {
    pub overall: f64,
    pub per_group: Vec<f64>,
    /// Relative group sizes. Absent for recorded results that only publish rates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_sizes: Option<Vec<f64>>,
}

impl GroupedAccuracy {
    pub fn from_rates(overall: f64, per_group: Vec<f64>) -> Self {
        GroupedAccuracy {
            overall,
            per_group,
            group_sizes: None,
        }
    }

    pub fn num_groups(&self) -> usize {
        self.per_group.len()
    }

    pub fn read_jsonl(path: &Path) -> Result<Vec<Self>> {
        read_jsonl(path)
    }
}

pub(crate) fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e))?);
    }
    Ok(out)
}

pub fn group_accuracy(outcomes: &LabeledOutcomes) -> Result<GroupedAccuracy> {
    let k = outcomes.num_groups;
    if outcomes.records.is_empty() || k == 0 {
        return Err(Error::EmptyGroup(0));
    }
    let mut correct = vec![0u64; k];
    let mut sizes = vec![0u64; k];
    for r in &outcomes.records {
        if r.group_id >= k {
            return Err(Error::InvalidConfig(format!(
                "group id {} outside [0, {k})",
                r.group_id
            )));
        }
        sizes[r.group_id] += 1;
        correct[r.group_id] += u64::from(r.correct());
    }
    if let Some(g) = sizes.iter().position(|&n| n == 0) {
        return Err(Error::EmptyGroup(g));
    }
    let total: u64 = sizes.iter().sum();
    let total_correct: u64 = correct.iter().sum();
    Ok(GroupedAccuracy {
        overall: total_correct as f64 / total as f64,
        per_group: correct
            .iter()
            .zip(&sizes)
            .map(|(&c, &n)| c as f64 / n as f64)
            .collect(),
        group_sizes: Some(sizes.iter().map(|&n| n as f64).collect()),
    })
}

/// Sum over groups of |group accuracy - overall accuracy|.
pub fn unfairness(ga: &GroupedAccuracy) -> f64 {
    ga.per_group.iter().map(|a| (a - ga.overall).abs()).sum()
}

/// Fractional improvement of `candidate_u` over `baseline_u`; positive is fairer.
pub fn relative_fairness_change(candidate_u: f64, baseline_u: f64) -> Result<f64> {
    if baseline_u == 0.0 {
        return Err(Error::ZeroBaseline);
    }
    Ok((baseline_u - candidate_u) / baseline_u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(p: i64, t: i64, g: usize) -> Outcome {
        Outcome {
            predicted_class: p,
            true_class: t,
            group_id: g,
        }
    }

    #[test]
    fn two_groups_by_hand() {
        let o = LabeledOutcomes::new(
            vec![rec(1, 1, 0), rec(2, 2, 0), rec(0, 0, 1), rec(0, 3, 1)],
            2,
        );
        let ga = group_accuracy(&o).unwrap();
        assert_eq!(ga.per_group, vec![1.0, 0.5]);
        assert_eq!(ga.overall, 0.75);
    }

    #[test]
    fn all_wrong_and_single_group() {
        let o = LabeledOutcomes::new(vec![rec(1, 0, 0), rec(1, 0, 1)], 2);
        let ga = group_accuracy(&o).unwrap();
        assert_eq!(ga.per_group, vec![0.0, 0.0]);
        assert_eq!(ga.overall, 0.0);

        let o = LabeledOutcomes::new(
            vec![rec(1, 1, 0), rec(1, 1, 0), rec(1, 1, 0), rec(1, 0, 0)],
            1,
        );
        let ga = group_accuracy(&o).unwrap();
        assert_eq!(ga.per_group, vec![0.75]);
        assert_eq!(ga.overall, 0.75);
    }

    #[test]
    fn missing_group_is_an_error() {
        let o = LabeledOutcomes::new(vec![rec(1, 1, 0), rec(1, 1, 2)], 3);
        assert!(matches!(group_accuracy(&o), Err(Error::EmptyGroup(1))));
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn unfairness_matches_published_rows() {
        let cases = [
            (0.8105, [0.8127, 0.5802], 0.2325),
            (0.7812, [0.7854, 0.3333], 0.4521),
            (0.8128, [0.8146, 0.6173], 0.1973),
        ];
        for (overall, groups, expected) in cases {
            let u = unfairness(&GroupedAccuracy::from_rates(overall, groups.to_vec()));
            assert!((u - expected).abs() < 5e-5, "{u} vs {expected}");
        }
        let same = GroupedAccuracy::from_rates(0.6, vec![0.6, 0.6]);
        assert_eq!(unfairness(&same), 0.0);
    }

    #[test]
    fn relative_change_examples() {
        let up = relative_fairness_change(0.1973, 0.2325).unwrap();
        assert!((up - 0.151_397_849).abs() < 1e-8);
        let down = relative_fairness_change(0.3094, 0.2325).unwrap();
        assert!((down + 0.330_752_688).abs() < 1e-8);
        assert_eq!(relative_fairness_change(0.3, 0.3).unwrap(), 0.0);
        assert!(matches!(
            relative_fairness_change(0.1, 0.0),
            Err(Error::ZeroBaseline)
        ));
    }

    #[test]
    fn jsonl_reader() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.jsonl");
        std::fs::write(
            &path,
            "{\"predicted_class\":1,\"true_class\":1,\"group_id\":0}\n\n{\"predicted_class\":0,\"true_class\":1,\"group_id\":1}\n",
        )
        .unwrap();
        let o = LabeledOutcomes::read_jsonl(&path).unwrap();
        assert_eq!(o.num_groups, 2);
        assert_eq!(group_accuracy(&o).unwrap().overall, 0.5);

        std::fs::write(
            &path,
            "{\"overall\":0.5,\"per_group\":[0.6,0.4]}\nnot json\n",
        )
        .unwrap();
        assert!(matches!(
            GroupedAccuracy::read_jsonl(&path),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    fn arb_outcomes() -> impl Strategy<Value = LabeledOutcomes> {
        (1usize..5).prop_flat_map(|k| {
            prop::collection::vec((0i64..3, 0i64..3, 0..k), 1..80).prop_map(move |rows| {
                let mut records: Vec<Outcome> =
                    rows.into_iter().map(|(p, t, g)| rec(p, t, g)).collect();
                // one guaranteed record per group
                records.extend((0..k).map(|g| rec(0, 0, g)));
                LabeledOutcomes::new(records, k)
            })
        })
    }

    proptest! {
        #[test]
        fn overall_is_size_weighted(o in arb_outcomes()) {
            let ga = group_accuracy(&o).unwrap();
            let sizes = ga.group_sizes.clone().unwrap();
            let weighted: f64 = sizes.iter().zip(&ga.per_group).map(|(n, a)| n * a).sum::<f64>()
                / sizes.iter().sum::<f64>();
            prop_assert!((weighted - ga.overall).abs() < 1e-12);
            let u = unfairness(&ga);
            prop_assert!(u >= 0.0 && u <= ga.num_groups() as f64);
        }

        #[test]
        fn unfairness_permutation_invariant(o in arb_outcomes(), shift in 0usize..5) {
            let k = o.num_groups;
            let permuted = LabeledOutcomes::new(
                o.records.iter().map(|r| rec(r.predicted_class, r.true_class, (r.group_id + shift) % k)).collect(),
                k,
            );
            let a = unfairness(&group_accuracy(&o).unwrap());
            let b = unfairness(&group_accuracy(&permuted).unwrap());
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn zero_iff_all_equal(o in arb_outcomes()) {
            let ga = group_accuracy(&o).unwrap();
            let all_equal = ga.per_group.iter().all(|a| (a - ga.overall).abs() < 1e-15);
            prop_assert_eq!(unfairness(&ga) < 1e-15, all_equal);
        }
    }
}
