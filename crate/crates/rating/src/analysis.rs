//! Unblinded summaries of a session: category proportions, preferences,
//! inter-rater agreement and patient-level detection tables.

use infarct_core::metrics::Contingency;
use infarct_core::stats::{
    chi_square_uniform, cohen_kappa, ChiSquareResult, ConfusionMatrix, Weighting,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::events::{RatingEvent, Resolved};
use crate::model::{Arm, Coarse, ComparisonChoice, Method, RatingCategory, TargetClass};
use crate::plan::SessionPlan;
use crate::RatingError;

/// A slice enters the A/B comparison unless both arms were rated true negative.
pub fn comparison_eligible(
    a: Option<RatingCategory>,
    b: Option<RatingCategory>,
) -> Result<bool, RatingError> {
    match (a, b) {
        (Some(a), Some(b)) => {
            Ok(!(a == RatingCategory::TrueNegative && b == RatingCategory::TrueNegative))
        }
        _ => Err(RatingError::Incomplete(
            "both arms must be rated before comparing".into(),
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub total: u64,
    pub categories: BTreeMap<RatingCategory, u64>,
    pub coarse: BTreeMap<Coarse, u64>,
    /// Percent of `total`; empty when nothing was rated.
    pub category_pct: BTreeMap<RatingCategory, f64>,
    pub coarse_pct: BTreeMap<Coarse, f64>,
}

impl Distribution {
    fn from_counts(categories: BTreeMap<RatingCategory, u64>) -> Self {
        let total: u64 = categories.values().sum();
        let mut coarse: BTreeMap<Coarse, u64> = Coarse::ALL.into_iter().map(|c| (c, 0)).collect();
        for (c, n) in &categories {
            *coarse.entry(c.coarse()).or_default() += n;
        }
        let pct = |n: u64| n as f64 / total as f64 * 100.0;
        let (category_pct, coarse_pct) = if total == 0 {
            (BTreeMap::new(), BTreeMap::new())
        } else {
            (
                categories.iter().map(|(&c, &n)| (c, pct(n))).collect(),
                coarse.iter().map(|(&c, &n)| (c, pct(n))).collect(),
            )
        };
        Distribution {
            total,
            categories,
            coarse,
            category_pct,
            coarse_pct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proportions {
    pub target_class: TargetClass,
    /// No rated slices for either method.
    pub empty: bool,
    pub manual: Distribution,
    pub automatic: Distribution,
}

/// Category counts per method over every resolved slice rating of `class`.
pub fn aggregate_proportions(
    plan: &SessionPlan,
    events: &[RatingEvent],
    class: TargetClass,
) -> Proportions {
    let resolved = Resolved::new(plan, events);
    let zero = || -> BTreeMap<RatingCategory, u64> {
        RatingCategory::ALL.into_iter().map(|c| (c, 0)).collect()
    };
    let mut counts: BTreeMap<Method, BTreeMap<RatingCategory, u64>> =
        [(Method::Manual, zero()), (Method::Automatic, zero())].into();
    for case in &plan.cases {
        let assignment = plan.assignment(&case.patient_id);
        for slice in 0..case.slices {
            for arm in Arm::BOTH {
                if let Some(c) = resolved.category(&case.patient_id, slice, class, arm) {
                    *counts
                        .get_mut(&assignment.method_of(arm))
                        .unwrap()
                        .get_mut(&c)
                        .unwrap() += 1;
                }
            }
        }
    }
    let manual = Distribution::from_counts(counts.remove(&Method::Manual).unwrap());
    let automatic = Distribution::from_counts(counts.remove(&Method::Automatic).unwrap());
    Proportions {
        target_class: class,
        empty: manual.total == 0 && automatic.total == 0,
        manual,
        automatic,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceFractions {
    pub ai: f64,
    pub human: f64,
    pub equal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceSummary {
    pub target_class: TargetClass,
    pub ai_preferred: u64,
    pub human_preferred: u64,
    pub equal: u64,
    /// Comparisons dropped because the slice is no longer eligible.
    pub excluded: u64,
    pub fractions: Option<PreferenceFractions>,
    /// Uniform chi-square over the two non-equal counts; absent when both are zero.
    pub chi_square: Option<ChiSquareResult>,
}

/// Unblinded comparison counts over eligible slices.
pub fn preference_summary(
    plan: &SessionPlan,
    events: &[RatingEvent],
    class: TargetClass,
) -> PreferenceSummary {
    let resolved = Resolved::new(plan, events);
    let (mut ai, mut human, mut equal, mut excluded) = (0u64, 0u64, 0u64, 0u64);
    for case in &plan.cases {
        let assignment = plan.assignment(&case.patient_id);
        for slice in 0..case.slices {
            let Some(choice) = resolved.comparison(&case.patient_id, slice, class) else {
                continue;
            };
            let eligible = comparison_eligible(
                resolved.category(&case.patient_id, slice, class, Arm::A),
                resolved.category(&case.patient_id, slice, class, Arm::B),
            );
            if eligible != Ok(true) {
                excluded += 1;
                continue;
            }
            match assignment.preferred(choice) {
                Some(Method::Automatic) => ai += 1,
                Some(Method::Manual) => human += 1,
                None => equal += 1,
            }
        }
    }
    let total = ai + human + equal;
    let fractions = (total > 0).then(|| PreferenceFractions {
        ai: ai as f64 / total as f64,
        human: human as f64 / total as f64,
        equal: equal as f64 / total as f64,
    });
    PreferenceSummary {
        target_class: class,
        ai_preferred: ai,
        human_preferred: human,
        equal,
        excluded,
        fractions,
        chi_square: chi_square_uniform(&[ai, human]).ok(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementKind {
    Categories,
    Comparison,
}

impl AgreementKind {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "categories" => Some(AgreementKind::Categories),
            "comparison" => Some(AgreementKind::Comparison),
            _ => None,
        }
    }
}

/// Ordered comparison outcomes after unblinding.
pub const PREFERENCE_LABELS: [&str; 3] = ["prefer_manual", "equal", "prefer_automatic"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub target_class: TargetClass,
    pub kind: AgreementKind,
    /// Row rater, column rater.
    pub raters: (String, String),
    pub matrix: ConfusionMatrix,
    pub weighting: Weighting,
    pub kappa: f64,
    pub n: u64,
}

/// Agreement of the first two roster raters on the shared subset.
/// Category ratings use unweighted kappa over the seven categories; A/B
/// comparisons are unblinded and use linearly weighted kappa.
pub fn rater_agreement(
    plan: &SessionPlan,
    events: &[RatingEvent],
    class: TargetClass,
    kind: AgreementKind,
) -> Result<Agreement, RatingError> {
    let [r1, r2] = match plan.raters.as_slice() {
        [a, b, ..] => [a.as_str(), b.as_str()],
        _ => return Err(RatingError::Incomplete("agreement needs two raters".into())),
    };
    let resolved = Resolved::new(plan, events);
    let mut pairs = Vec::new();
    for p in &plan.overlap {
        let slices = plan.case(p).map_or(0, |c| c.slices);
        let assignment = plan.assignment(p);
        for slice in 0..slices {
            match kind {
                AgreementKind::Categories => {
                    for arm in Arm::BOTH {
                        let a = resolved
                            .by_rater(r1, p, slice, class, Some(arm))
                            .and_then(RatingEvent::category);
                        let b = resolved
                            .by_rater(r2, p, slice, class, Some(arm))
                            .and_then(RatingEvent::category);
                        if let (Some(a), Some(b)) = (a, b) {
                            pairs.push((a.index(), b.index()));
                        }
                    }
                }
                AgreementKind::Comparison => {
                    let ordinal = |c: ComparisonChoice| match assignment.preferred(c) {
                        Some(Method::Manual) => 0,
                        None => 1,
                        Some(Method::Automatic) => 2,
                    };
                    let a = resolved
                        .by_rater(r1, p, slice, class, None)
                        .and_then(RatingEvent::choice);
                    let b = resolved
                        .by_rater(r2, p, slice, class, None)
                        .and_then(RatingEvent::choice);
                    if let (Some(a), Some(b)) = (a, b) {
                        pairs.push((ordinal(a), ordinal(b)));
                    }
                }
            }
        }
    }
    if pairs.is_empty() {
        return Err(RatingError::Incomplete(
            "no shared ratings on the overlap subset".into(),
        ));
    }
    let (labels, weighting): (Vec<String>, _) = match kind {
        AgreementKind::Categories => (
            RatingCategory::ALL
                .iter()
                .map(|c| c.name().to_string())
                .collect(),
            Weighting::None,
        ),
        AgreementKind::Comparison => (
            PREFERENCE_LABELS.iter().map(|s| s.to_string()).collect(),
            Weighting::Linear,
        ),
    };
    let matrix = ConfusionMatrix::from_pairs(labels, &pairs).expect("fixed label set");
    let kappa = cohen_kappa(&matrix, weighting).expect("non-empty matrix");
    Ok(Agreement {
        target_class: class,
        kind,
        raters: (r1.to_string(), r2.to_string()),
        n: matrix.total(),
        matrix,
        weighting,
        kappa,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientContingency {
    pub target_class: TargetClass,
    pub manual: Contingency,
    pub automatic: Contingency,
    /// Patients with a wrong-organ rating; such slices never make a patient positive.
    pub wrong_organ_patients: Vec<String>,
}

/// Patient-level detection tables from the resolved ratings.
///
/// A patient is truly positive when any slice rating of either arm
/// implies the class is present. A method predicts positive when any
/// slice rating of its arm implies it marked something.
pub fn patient_contingency_from_ratings(
    plan: &SessionPlan,
    events: &[RatingEvent],
    class: TargetClass,
) -> Result<PatientContingency, RatingError> {
    let resolved = Resolved::new(plan, events);
    let mut manual = Contingency::default();
    let mut automatic = Contingency::default();
    let mut wrong_organ_patients = Vec::new();
    for case in &plan.cases {
        let assignment = plan.assignment(&case.patient_id);
        let mut truth = false;
        let mut marked = [false; 2];
        let mut wrong_organ = false;
        for slice in 0..case.slices {
            for (i, arm) in Arm::BOTH.into_iter().enumerate() {
                let c = resolved
                    .category(&case.patient_id, slice, class, arm)
                    .ok_or_else(|| {
                        RatingError::Incomplete(format!(
                            "patient {} slice {slice} arm {} has no {} rating",
                            case.patient_id,
                            arm.name(),
                            class.name()
                        ))
                    })?;
                truth |= c.implies_presence();
                marked[i] |= c.implies_marking();
                wrong_organ |= c == RatingCategory::WrongOrgan;
            }
        }
        for (i, arm) in Arm::BOTH.into_iter().enumerate() {
            match assignment.method_of(arm) {
                Method::Manual => manual.add(marked[i], truth),
                Method::Automatic => automatic.add(marked[i], truth),
            }
        }
        if wrong_organ {
            wrong_organ_patients.push(case.patient_id.clone());
        }
    }
    Ok(PatientContingency {
        target_class: class,
        manual,
        automatic,
        wrong_organ_patients,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{EventDraft, EventLog, Payload};
    use crate::plan::{CaseEntry, CONSENSUS_RATER};

    fn plan(n: usize, slices: usize, overlap: usize) -> SessionPlan {
        let cases = (0..n)
            .map(|i| CaseEntry {
                patient_id: format!("P{i:03}"),
                manual_path: String::new(),
                auto_path: String::new(),
                slices,
            })
            .collect();
        SessionPlan::build("s", cases, vec!["r1".into(), "r2".into()], overlap, 11).unwrap()
    }

    fn rate(log: &EventLog, rater: &str, p: &str, slice: usize, arm: Arm, c: RatingCategory) {
        log.append(EventDraft {
            rater_id: rater.into(),
            patient_id: p.into(),
            slice_index: slice,
            target_class: TargetClass::Scar,
            arm: Some(arm),
            payload: Payload::Category(c),
        })
        .unwrap();
    }

    fn compare(log: &EventLog, rater: &str, p: &str, slice: usize, c: ComparisonChoice) {
        log.append(EventDraft {
            rater_id: rater.into(),
            patient_id: p.into(),
            slice_index: slice,
            target_class: TargetClass::Scar,
            arm: None,
            payload: Payload::Comparison(c),
        })
        .unwrap();
    }

    fn owner<'a>(plan: &'a SessionPlan, p: &str) -> &'a str {
        if plan.partitions[1].iter().any(|q| q == p) {
            "r2"
        } else {
            "r1"
        }
    }

    #[test]
    fn eligibility_rule() {
        use RatingCategory::*;
        assert_eq!(
            comparison_eligible(Some(TrueNegative), Some(TrueNegative)),
            Ok(false)
        );
        assert_eq!(
            comparison_eligible(Some(TrueNegative), Some(FalsePositive)),
            Ok(true)
        );
        assert_eq!(
            comparison_eligible(Some(FalsePositive), Some(TrueNegative)),
            Ok(true)
        );
        assert_eq!(comparison_eligible(Some(Optimal), Some(Optimal)), Ok(true));
        assert!(comparison_eligible(Some(Optimal), None).is_err());
    }

    #[test]
    fn all_optimal_is_all_true_positive() {
        let plan = plan(4, 2, 0);
        let log = EventLog::in_memory("s");
        for c in &plan.cases {
            for s in 0..2 {
                for arm in Arm::BOTH {
                    rate(
                        &log,
                        owner(&plan, &c.patient_id),
                        &c.patient_id,
                        s,
                        arm,
                        RatingCategory::Optimal,
                    );
                }
            }
        }
        let p = aggregate_proportions(&plan, &log.snapshot(), TargetClass::Scar);
        assert!(!p.empty);
        assert_eq!(p.manual.coarse_pct[&Coarse::TruePositive], 100.0);
        assert_eq!(p.automatic.coarse_pct[&Coarse::TruePositive], 100.0);
        assert_eq!(p.manual.total + p.automatic.total, 16);
    }

    #[test]
    fn empty_session_is_marked_empty() {
        let plan = plan(3, 2, 1);
        let p = aggregate_proportions(&plan, &[], TargetClass::Scar);
        assert!(p.empty);
        assert_eq!(p.manual.total, 0);
        assert!(p.manual.category_pct.is_empty());
        assert_eq!(p.manual.categories.len(), 7);
    }

    #[test]
    fn injected_false_negative_share() {
        // 1000 automatic slice ratings of which 26 are false negatives.
        let plan = plan(100, 10, 0);
        let log = EventLog::in_memory("s");
        let mut fn_left = 26;
        for c in &plan.cases {
            let a = plan.assignment(&c.patient_id);
            for s in 0..10 {
                let auto = if fn_left > 0 {
                    fn_left -= 1;
                    RatingCategory::FalseNegative
                } else {
                    RatingCategory::Optimal
                };
                rate(
                    &log,
                    owner(&plan, &c.patient_id),
                    &c.patient_id,
                    s,
                    a.arm_of(Method::Automatic),
                    auto,
                );
                rate(
                    &log,
                    owner(&plan, &c.patient_id),
                    &c.patient_id,
                    s,
                    a.arm_of(Method::Manual),
                    RatingCategory::TooBig,
                );
            }
        }
        let p = aggregate_proportions(&plan, &log.snapshot(), TargetClass::Scar);
        assert!((p.automatic.coarse_pct[&Coarse::FalseNegative] - 2.6).abs() < 1e-12);
        assert_eq!(p.manual.coarse_pct[&Coarse::FalseNegative], 0.0);
    }

    #[test]
    fn comparison_unblinding_and_exclusion() {
        let plan = plan(2, 2, 0);
        let log = EventLog::in_memory("s");
        let p0 = plan.cases[0].patient_id.clone();
        let who = owner(&plan, &p0).to_string();
        let a = plan.assignment(&p0);
        rate(&log, &who, &p0, 0, Arm::A, RatingCategory::Optimal);
        rate(&log, &who, &p0, 0, Arm::B, RatingCategory::TooBig);
        let pick_auto = if a.method_of_a == Method::Automatic {
            ComparisonChoice::A
        } else {
            ComparisonChoice::B
        };
        compare(&log, &who, &p0, 0, pick_auto);
        let s = preference_summary(&plan, &log.snapshot(), TargetClass::Scar);
        assert_eq!((s.ai_preferred, s.human_preferred, s.equal), (1, 0, 0));
        // Both arms later revised to true negative: the comparison drops out.
        rate(&log, &who, &p0, 0, Arm::A, RatingCategory::TrueNegative);
        rate(&log, &who, &p0, 0, Arm::B, RatingCategory::TrueNegative);
        let s = preference_summary(&plan, &log.snapshot(), TargetClass::Scar);
        assert_eq!((s.ai_preferred, s.excluded), (0, 1));
        assert!(s.fractions.is_none() && s.chi_square.is_none());
    }

    #[test]
    fn all_equal_has_no_p_value() {
        let plan = plan(3, 1, 0);
        let log = EventLog::in_memory("s");
        for c in &plan.cases {
            let who = owner(&plan, &c.patient_id);
            rate(&log, who, &c.patient_id, 0, Arm::A, RatingCategory::Optimal);
            rate(&log, who, &c.patient_id, 0, Arm::B, RatingCategory::Optimal);
            compare(&log, who, &c.patient_id, 0, ComparisonChoice::Equal);
        }
        let s = preference_summary(&plan, &log.snapshot(), TargetClass::Scar);
        assert_eq!((s.ai_preferred, s.human_preferred, s.equal), (0, 0, 3));
        assert!(s.chi_square.is_none());
    }

    #[test]
    fn identical_raters_agree_perfectly() {
        let plan = plan(6, 2, 3);
        let log = EventLog::in_memory("s");
        let cats = RatingCategory::ALL;
        for (i, p) in plan.overlap.iter().enumerate() {
            for s in 0..2 {
                for arm in Arm::BOTH {
                    let c = cats[(i + s + arm as usize) % 7];
                    rate(&log, "r1", p, s, arm, c);
                    rate(&log, "r2", p, s, arm, c);
                }
                compare(&log, "r1", p, s, ComparisonChoice::A);
                compare(&log, "r2", p, s, ComparisonChoice::A);
            }
        }
        let snap = log.snapshot();
        let a =
            rater_agreement(&plan, &snap, TargetClass::Scar, AgreementKind::Categories).unwrap();
        assert_eq!((a.kappa, a.n), (1.0, 12));
        let c =
            rater_agreement(&plan, &snap, TargetClass::Scar, AgreementKind::Comparison).unwrap();
        assert_eq!(c.kappa, 1.0);
        assert_eq!(c.weighting, Weighting::Linear);
        assert!(rater_agreement(&plan, &[], TargetClass::Scar, AgreementKind::Categories).is_err());
    }

    #[test]
    fn contingency_rules() {
        use RatingCategory::*;
        let plan = plan(2, 3, 0);
        let log = EventLog::in_memory("s");
        let (p0, p1) = (
            plan.cases[0].patient_id.clone(),
            plan.cases[1].patient_id.clone(),
        );
        for s in 0..3 {
            for arm in Arm::BOTH {
                rate(&log, owner(&plan, &p0), &p0, s, arm, TrueNegative);
            }
        }
        let a1 = plan.assignment(&p1);
        for s in 0..3 {
            let auto = if s == 1 { FalseNegative } else { TrueNegative };
            rate(
                &log,
                owner(&plan, &p1),
                &p1,
                s,
                a1.arm_of(Method::Automatic),
                auto,
            );
            let manual = if s == 1 { Optimal } else { TrueNegative };
            rate(
                &log,
                owner(&plan, &p1),
                &p1,
                s,
                a1.arm_of(Method::Manual),
                manual,
            );
        }
        let t =
            patient_contingency_from_ratings(&plan, &log.snapshot(), TargetClass::Scar).unwrap();
        assert_eq!(t.automatic, Contingency::new(0, 0, 1, 1));
        assert_eq!(t.manual, Contingency::new(1, 0, 0, 1));

        let partial = plan.clone();
        let log2 = EventLog::in_memory("s");
        rate(&log2, owner(&partial, &p0), &p0, 0, Arm::A, TrueNegative);
        assert!(
            patient_contingency_from_ratings(&partial, &log2.snapshot(), TargetClass::Scar)
                .is_err()
        );
    }

    #[test]
    fn consensus_overrides_raters() {
        let plan = plan(2, 1, 2);
        let log = EventLog::in_memory("s");
        let p = plan.overlap[0].clone();
        rate(&log, "r1", &p, 0, Arm::A, RatingCategory::Optimal);
        rate(&log, "r2", &p, 0, Arm::A, RatingCategory::TooBig);
        let resolved =
            Resolved::new(&plan, &log.snapshot()).category(&p, 0, TargetClass::Scar, Arm::A);
        assert_eq!(resolved, Some(RatingCategory::Optimal));
        rate(
            &log,
            CONSENSUS_RATER,
            &p,
            0,
            Arm::A,
            RatingCategory::TooSmall,
        );
        let snap = log.snapshot();
        let resolved = Resolved::new(&plan, &snap).category(&p, 0, TargetClass::Scar, Arm::A);
        assert_eq!(resolved, Some(RatingCategory::TooSmall));
    }
}
