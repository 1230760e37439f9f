//! Session plans: case distribution among raters and the task order.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::model::{CaseAssignment, TargetClass};
use crate::RatingError;

/// Rater id reserved for consensus decisions that supersede individual ratings.
pub const CONSENSUS_RATER: &str = "consensus";

/// One patient with its two segmentations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub patient_id: String,
    pub manual_path: String,
    pub auto_path: String,
}

/// A manifest entry after its volumes were read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub patient_id: String,
    pub manual_path: String,
    pub auto_path: String,
    pub slices: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub session_id: String,
    pub seed: u64,
    /// Cases in shuffled plan order.
    pub cases: Vec<CaseEntry>,
    pub raters: Vec<String>,
    /// Patients rated by every rater.
    pub overlap: Vec<String>,
    /// Remaining patients, one contiguous chunk per rater in roster order.
    pub partitions: Vec<Vec<String>>,
}

/// One unit of work: both arms of one class on one slice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub patient_id: String,
    pub slice_index: usize,
    pub target_class: TargetClass,
}

impl SessionPlan {
    /// Shuffles `cases` with ChaCha8 seeded by `seed`, takes the first
    /// `overlap_n` as the shared subset and splits the rest into
    /// near-equal contiguous chunks (earlier raters get the extra case).
    pub fn build(
        session_id: impl Into<String>,
        cases: Vec<CaseEntry>,
        raters: Vec<String>,
        overlap_n: usize,
        seed: u64,
    ) -> Result<Self, RatingError> {
        if raters.is_empty() {
            return Err(RatingError::Invalid("roster is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for r in &raters {
            if r.is_empty() || r == CONSENSUS_RATER || !seen.insert(r.as_str()) {
                return Err(RatingError::Invalid(format!(
                    "invalid or duplicate rater id {r:?}"
                )));
            }
        }
        let mut ids = BTreeSet::new();
        for c in &cases {
            if !ids.insert(c.patient_id.as_str()) {
                return Err(RatingError::Invalid(format!(
                    "duplicate patient id {:?}",
                    c.patient_id
                )));
            }
        }
        if overlap_n > cases.len() {
            return Err(RatingError::Invalid(format!(
                "overlap of {overlap_n} exceeds {} cases",
                cases.len()
            )));
        }

        let mut cases = cases;
        cases.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let overlap: Vec<String> = cases[..overlap_n]
            .iter()
            .map(|c| c.patient_id.clone())
            .collect();
        let rest = &cases[overlap_n..];
        let (base, extra) = (rest.len() / raters.len(), rest.len() % raters.len());
        let mut partitions = Vec::with_capacity(raters.len());
        let mut start = 0;
        for i in 0..raters.len() {
            let len = base + usize::from(i < extra);
            partitions.push(
                rest[start..start + len]
                    .iter()
                    .map(|c| c.patient_id.clone())
                    .collect(),
            );
            start += len;
        }

        Ok(SessionPlan {
            session_id: session_id.into(),
            seed,
            cases,
            raters,
            overlap,
            partitions,
        })
    }

    pub fn case(&self, patient_id: &str) -> Option<&CaseEntry> {
        self.cases.iter().find(|c| c.patient_id == patient_id)
    }

    pub fn assignment(&self, patient_id: &str) -> CaseAssignment {
        CaseAssignment::derive(self.seed, patient_id)
    }

    pub fn has_rater(&self, rater: &str) -> bool {
        rater == CONSENSUS_RATER || self.raters.iter().any(|r| r == rater)
    }

    /// Patients a rater sees: the shared subset first, then their own chunk.
    /// The consensus rater may act on every case.
    pub fn patients_for(&self, rater: &str) -> Option<Vec<&str>> {
        if rater == CONSENSUS_RATER {
            return Some(self.cases.iter().map(|c| c.patient_id.as_str()).collect());
        }
        let i = self.raters.iter().position(|r| r == rater)?;
        Some(
            self.overlap
                .iter()
                .chain(&self.partitions[i])
                .map(String::as_str)
                .collect(),
        )
    }

    pub fn is_assigned(&self, rater: &str, patient_id: &str) -> bool {
        self.patients_for(rater)
            .is_some_and(|ps| ps.contains(&patient_id))
    }

    /// Task list ordered patient, then slice, then class.
    pub fn tasks_for(&self, rater: &str) -> Option<Vec<Task>> {
        let patients = self.patients_for(rater)?;
        let mut tasks = Vec::new();
        for p in patients {
            let slices = self.case(p).map_or(0, |c| c.slices);
            for slice_index in 0..slices {
                for target_class in TargetClass::ALL {
                    tasks.push(Task {
                        patient_id: p.to_string(),
                        slice_index,
                        target_class,
                    });
                }
            }
        }
        Some(tasks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cases(n: usize) -> Vec<CaseEntry> {
        (0..n)
            .map(|i| CaseEntry {
                patient_id: format!("P{i:03}"),
                manual_path: format!("m/{i}"),
                auto_path: format!("a/{i}"),
                slices: 2,
            })
            .collect()
    }

    fn roster() -> Vec<String> {
        vec!["r1".into(), "r2".into()]
    }

    #[test]
    fn full_overlap_gives_everyone_everything() {
        let plan = SessionPlan::build("s", cases(20), roster(), 20, 1).unwrap();
        assert_eq!(plan.overlap.len(), 20);
        assert!(plan.partitions.iter().all(Vec::is_empty));
        assert_eq!(plan.patients_for("r1").unwrap().len(), 20);
        assert_eq!(plan.patients_for("r2").unwrap().len(), 20);
    }

    #[test]
    fn overlap_then_even_split() {
        let plan = SessionPlan::build("s", cases(152), roster(), 20, 9).unwrap();
        assert_eq!(plan.overlap.len(), 20);
        assert_eq!(plan.partitions[0].len(), 66);
        assert_eq!(plan.partitions[1].len(), 66);
        let mut all: Vec<&String> = plan
            .overlap
            .iter()
            .chain(plan.partitions.iter().flatten())
            .collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 152);
    }

    #[test]
    fn odd_remainder_goes_to_first_rater() {
        let plan = SessionPlan::build(
            "s",
            cases(11),
            vec!["a".into(), "b".into(), "c".into()],
            3,
            0,
        )
        .unwrap();
        let sizes: Vec<usize> = plan.partitions.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 3, 2]);
    }

    #[test]
    fn plan_is_deterministic() {
        let a = SessionPlan::build("s", cases(40), roster(), 10, 5).unwrap();
        let b = SessionPlan::build("s", cases(40), roster(), 10, 5).unwrap();
        assert_eq!(a, b);
        let c = SessionPlan::build("s", cases(40), roster(), 10, 6).unwrap();
        assert_ne!(a.cases, c.cases);
    }

    #[test]
    fn invalid_inputs() {
        let mut dup = cases(3);
        dup[2].patient_id = "P000".into();
        assert!(SessionPlan::build("s", dup, roster(), 0, 0).is_err());
        assert!(SessionPlan::build("s", cases(3), vec![], 0, 0).is_err());
        assert!(SessionPlan::build("s", cases(3), roster(), 4, 0).is_err());
        assert!(SessionPlan::build("s", cases(3), vec!["x".into(), "x".into()], 0, 0).is_err());
        assert!(SessionPlan::build("s", cases(3), vec![CONSENSUS_RATER.into()], 0, 0).is_err());
    }

    #[test]
    fn tasks_are_patient_then_slice_then_class() {
        let plan = SessionPlan::build("s", cases(4), roster(), 2, 3).unwrap();
        let tasks = plan.tasks_for("r1").unwrap();
        assert_eq!(tasks.len(), 3 * 2 * 2);
        assert_eq!(tasks[0].patient_id, plan.overlap[0]);
        assert_eq!(
            (tasks[0].slice_index, tasks[0].target_class),
            (0, TargetClass::Scar)
        );
        assert_eq!(
            (tasks[1].slice_index, tasks[1].target_class),
            (0, TargetClass::Mvo)
        );
        assert_eq!(
            (tasks[2].slice_index, tasks[2].target_class),
            (1, TargetClass::Scar)
        );
        assert!(plan.tasks_for("nobody").is_none());
    }
}
