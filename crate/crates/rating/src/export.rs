//! CSV export and re-import of a session's effective events.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::events::{effective_events, Payload, RatingEvent};
use crate::model::{Arm, ComparisonChoice, RatingCategory, TargetClass};
use crate::plan::SessionPlan;
use crate::RatingError;

pub const RATINGS_HEADER: [&str; 9] = [
    "session_id",
    "rater_id",
    "patient_id",
    "slice",
    "class",
    "arm",
    "category",
    "seq",
    "timestamp",
];
pub const COMPARISONS_HEADER: [&str; 8] = [
    "session_id",
    "rater_id",
    "patient_id",
    "slice",
    "class",
    "choice",
    "seq",
    "timestamp",
];
pub const MAPPING_HEADER: [&str; 4] = [
    "patient_id",
    "method_of_a",
    "method_of_b",
    "wrong_organ_ratings",
];

/// Export files by name. `plan.json` travels along so an import can be
/// re-aggregated without the server.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportBundle {
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RatingRow {
    session_id: String,
    rater_id: String,
    patient_id: String,
    slice: usize,
    class: TargetClass,
    arm: Arm,
    category: RatingCategory,
    seq: u64,
    timestamp: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ComparisonRow {
    session_id: String,
    rater_id: String,
    patient_id: String,
    slice: usize,
    class: TargetClass,
    choice: ComparisonChoice,
    seq: u64,
    timestamp: u64,
}

fn csv_err(e: csv::Error) -> RatingError {
    RatingError::Corrupt(e.to_string())
}

fn to_csv<R: Serialize>(
    header: &[&str],
    rows: impl IntoIterator<Item = R>,
) -> Result<String, RatingError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| RatingError::Corrupt(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Writes the latest event per key, ordered by sequence number, plus the
/// unblinded mapping with one row per case.
pub fn export_session(
    plan: &SessionPlan,
    events: &[RatingEvent],
) -> Result<ExportBundle, RatingError> {
    let eff = effective_events(events);
    let ratings = to_csv(
        &RATINGS_HEADER,
        eff.iter().filter_map(|e| match (e.payload, e.arm) {
            (Payload::Category(category), Some(arm)) => Some(RatingRow {
                session_id: e.session_id.clone(),
                rater_id: e.rater_id.clone(),
                patient_id: e.patient_id.clone(),
                slice: e.slice_index,
                class: e.target_class,
                arm,
                category,
                seq: e.seq,
                timestamp: e.timestamp_ms,
            }),
            _ => None,
        }),
    )?;
    let comparisons = to_csv(
        &COMPARISONS_HEADER,
        eff.iter().filter_map(|e| match e.payload {
            Payload::Comparison(choice) => Some(ComparisonRow {
                session_id: e.session_id.clone(),
                rater_id: e.rater_id.clone(),
                patient_id: e.patient_id.clone(),
                slice: e.slice_index,
                class: e.target_class,
                choice,
                seq: e.seq,
                timestamp: e.timestamp_ms,
            }),
            Payload::Category(_) => None,
        }),
    )?;
    let mapping = to_csv(
        &MAPPING_HEADER,
        plan.cases.iter().map(|c| {
            let a = plan.assignment(&c.patient_id);
            let wrong_organ = eff
                .iter()
                .filter(|e| {
                    e.patient_id == c.patient_id && e.category() == Some(RatingCategory::WrongOrgan)
                })
                .count();
            (
                c.patient_id.clone(),
                a.method_of_a,
                a.method_of_b,
                wrong_organ,
            )
        }),
    )?;
    let plan_json =
        serde_json::to_string_pretty(plan).map_err(|e| RatingError::Corrupt(e.to_string()))?;
    Ok(ExportBundle {
        files: [
            ("ratings.csv".to_string(), ratings),
            ("comparisons.csv".to_string(), comparisons),
            ("mapping.csv".to_string(), mapping),
            ("plan.json".to_string(), plan_json + "\n"),
        ]
        .into(),
    })
}

fn read_rows<R: for<'de> Deserialize<'de>>(
    text: &str,
    header: &[&str],
) -> Result<Vec<R>, RatingError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let found: Vec<String> = r
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    if found != header {
        return Err(RatingError::Corrupt(format!("unexpected header {found:?}")));
    }
    r.deserialize()
        .collect::<Result<Vec<R>, _>>()
        .map_err(csv_err)
}

/// Reads the plan and events back from an export bundle.
pub fn import_session(
    bundle: &ExportBundle,
) -> Result<(SessionPlan, Vec<RatingEvent>), RatingError> {
    let file = |name: &str| {
        bundle
            .files
            .get(name)
            .ok_or_else(|| RatingError::Corrupt(format!("bundle lacks {name}")))
    };
    let plan: SessionPlan = serde_json::from_str(file("plan.json")?)
        .map_err(|e| RatingError::Corrupt(e.to_string()))?;
    let mut events: Vec<RatingEvent> =
        read_rows::<RatingRow>(file("ratings.csv")?, &RATINGS_HEADER)?
            .into_iter()
            .map(|r| RatingEvent {
                session_id: r.session_id,
                rater_id: r.rater_id,
                patient_id: r.patient_id,
                slice_index: r.slice,
                target_class: r.class,
                arm: Some(r.arm),
                payload: Payload::Category(r.category),
                timestamp_ms: r.timestamp,
                seq: r.seq,
            })
            .collect();
    events.extend(
        read_rows::<ComparisonRow>(file("comparisons.csv")?, &COMPARISONS_HEADER)?
            .into_iter()
            .map(|r| RatingEvent {
                session_id: r.session_id,
                rater_id: r.rater_id,
                patient_id: r.patient_id,
                slice_index: r.slice,
                target_class: r.class,
                arm: None,
                payload: Payload::Comparison(r.choice),
                timestamp_ms: r.timestamp,
                seq: r.seq,
            }),
    );
    events.sort_by_key(|e| e.seq);
    Ok((plan, events))
}

pub fn write_bundle(bundle: &ExportBundle, dir: impl AsRef<Path>) -> Result<(), RatingError> {
    std::fs::create_dir_all(dir.as_ref())?;
    for (name, text) in &bundle.files {
        std::fs::write(dir.as_ref().join(name), text)?;
    }
    Ok(())
}

pub fn read_bundle(dir: impl AsRef<Path>) -> Result<ExportBundle, RatingError> {
    let mut files = BTreeMap::new();
    for name in ["ratings.csv", "comparisons.csv", "mapping.csv", "plan.json"] {
        files.insert(
            name.to_string(),
            std::fs::read_to_string(dir.as_ref().join(name))?,
        );
    }
    Ok(ExportBundle { files })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{EventDraft, EventLog};
    use crate::plan::CaseEntry;

    fn plan() -> SessionPlan {
        let cases = (0..3)
            .map(|i| CaseEntry {
                patient_id: format!("P{i}"),
                manual_path: String::new(),
                auto_path: String::new(),
                slices: 2,
            })
            .collect();
        SessionPlan::build("s", cases, vec!["r1".into()], 0, 4).unwrap()
    }

    #[test]
    fn empty_session_exports_headers_only() {
        let b = export_session(&plan(), &[]).unwrap();
        assert_eq!(b.files["ratings.csv"], RATINGS_HEADER.join(",") + "\n");
        assert_eq!(
            b.files["comparisons.csv"],
            COMPARISONS_HEADER.join(",") + "\n"
        );
        assert_eq!(b.files["mapping.csv"].lines().count(), 4);
        let (p, events) = import_session(&b).unwrap();
        assert_eq!(p, plan());
        assert!(events.is_empty());
    }

    #[test]
    fn export_keeps_latest_per_key() {
        let plan = plan();
        let log = EventLog::in_memory("s");
        for c in [RatingCategory::Optimal, RatingCategory::WrongOrgan] {
            log.append(EventDraft {
                rater_id: "r1".into(),
                patient_id: "P0".into(),
                slice_index: 1,
                target_class: TargetClass::Mvo,
                arm: Some(Arm::B),
                payload: Payload::Category(c),
            })
            .unwrap();
        }
        let b = export_session(&plan, &log.snapshot()).unwrap();
        let rows: Vec<&str> = b.files["ratings.csv"].lines().collect();
        assert_eq!(rows.len(), 2);
        assert!(rows[1].starts_with("s,r1,P0,1,mvo,B,wrong_organ,2,"));
        assert!(b.files["mapping.csv"]
            .lines()
            .any(|l| l.starts_with("P0,") && l.ends_with(",1")));
        let (_, events) = import_session(&b).unwrap();
        assert_eq!(events, effective_events(&log.snapshot()));
    }

    #[test]
    fn bad_header_is_rejected() {
        let mut b = export_session(&plan(), &[]).unwrap();
        b.files.insert("ratings.csv".into(), "a,b\n".into());
        assert!(import_session(&b).is_err());
    }
}
