use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use super::TrainError;
use crate::seed;
use crate::signal::TrialSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    /// Every subject's trials share one fold: test subjects are unseen.
    BySubject,
    /// Trials are dealt independently of their subject.
    ByTrial,
}

impl FromStr for Grouping {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "subject" | "by-subject" => Ok(Self::BySubject),
            "trial" | "by-trial" => Ok(Self::ByTrial),
            other => Err(format!("grouping must be `subject` or `trial`, got {other:?}")),
        }
    }
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::BySubject => "subject",
            Self::ByTrial => "trial",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    /// Fold index of every trial.
    pub assignments: Vec<usize>,
    pub grouping: Grouping,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignments {
            s[a] += 1;
        }
        s
    }

    /// Fails when any subject appears on both sides of `fold`.
    pub fn check_subject_disjoint(&self, trials: &TrialSet, fold: usize) -> Result<(), TrainError> {
        let mut test = BTreeSet::new();
        let mut train = BTreeSet::new();
        for (i, &a) in self.assignments.iter().enumerate() {
            let s = trials.subject_ids[i];
            if a == fold {
                test.insert(s);
            } else {
                train.insert(s);
            }
        }
        let shared: Vec<u16> = test.intersection(&train).copied().collect();
        if shared.is_empty() {
            Ok(())
        } else {
            Err(TrainError::SubjectLeak { fold, subjects: shared })
        }
    }
}

/// Shuffles subjects (or trials) with `seed` and deals them round-robin.
pub fn make_folds(
    trials: &TrialSet,
    k: usize,
    grouping: Grouping,
    seed: u64,
) -> Result<FoldPlan, TrainError> {
    if k < 2 {
        return Err(TrainError::Config(format!("need at least 2 folds, got {k}")));
    }
    let mut rng = seed::rng(seed);
    let n = trials.n_trials();
    let assignments = match grouping {
        Grouping::BySubject => {
            let mut subjects = trials.subjects();
            if subjects.len() < k {
                return Err(TrainError::Config(format!(
                    "{} subjects cannot fill {k} subject-grouped folds",
                    subjects.len()
                )));
            }
            subjects.shuffle(&mut rng);
            let fold_of = |s: u16| subjects.iter().position(|&x| x == s).unwrap() % k;
            trials.subject_ids.iter().map(|&s| fold_of(s)).collect()
        }
        Grouping::ByTrial => {
            if n < k {
                return Err(TrainError::Config(format!("{n} trials cannot fill {k} folds")));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut a = vec![0; n];
            for (pos, &i) in order.iter().enumerate() {
                a[i] = pos % k;
            }
            a
        }
    };
    Ok(FoldPlan {
        k,
        assignments,
        grouping,
    })
}
