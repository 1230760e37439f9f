//! Append-only rating log with supersession by key.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::model::{Arm, ComparisonChoice, RatingCategory, TargetClass};
use crate::plan::{SessionPlan, CONSENSUS_RATER};
use crate::RatingError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Category(RatingCategory),
    Comparison(ComparisonChoice),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingEvent {
    pub session_id: String,
    pub rater_id: String,
    pub patient_id: String,
    pub slice_index: usize,
    pub target_class: TargetClass,
    /// Present for category ratings, absent for comparisons.
    pub arm: Option<Arm>,
    pub payload: Payload,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
    pub seq: u64,
}

/// Supersession key: a later event with the same key replaces the earlier one.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EventKey {
    pub rater_id: String,
    pub patient_id: String,
    pub slice_index: usize,
    pub target_class: TargetClass,
    pub arm: Option<Arm>,
}

impl RatingEvent {
    pub fn key(&self) -> EventKey {
        EventKey {
            rater_id: self.rater_id.clone(),
            patient_id: self.patient_id.clone(),
            slice_index: self.slice_index,
            target_class: self.target_class,
            arm: self.arm,
        }
    }

    pub fn category(&self) -> Option<RatingCategory> {
        match self.payload {
            Payload::Category(c) => Some(c),
            Payload::Comparison(_) => None,
        }
    }

    pub fn choice(&self) -> Option<ComparisonChoice> {
        match self.payload {
            Payload::Comparison(c) => Some(c),
            Payload::Category(_) => None,
        }
    }
}

/// An event before the log assigns its sequence number and timestamp.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventDraft {
    pub rater_id: String,
    pub patient_id: String,
    pub slice_index: usize,
    pub target_class: TargetClass,
    pub arm: Option<Arm>,
    pub payload: Payload,
}

impl EventDraft {
    /// Checks the draft against the plan: known rater, assigned patient,
    /// slice in range, and an arm exactly when the payload is a category.
    pub fn validate(&self, plan: &SessionPlan) -> Result<(), RatingError> {
        if !plan.has_rater(&self.rater_id) {
            return Err(RatingError::NotFound(format!("rater {:?}", self.rater_id)));
        }
        let case = plan.case(&self.patient_id).ok_or_else(|| {
            RatingError::Invalid(format!("unknown patient {:?}", self.patient_id))
        })?;
        if !plan.is_assigned(&self.rater_id, &self.patient_id) {
            return Err(RatingError::Invalid(format!(
                "patient {:?} is not assigned to rater {:?}",
                self.patient_id, self.rater_id
            )));
        }
        if self.slice_index >= case.slices {
            return Err(RatingError::Invalid(format!(
                "slice {} out of range for {} slices",
                self.slice_index, case.slices
            )));
        }
        match (&self.payload, self.arm) {
            (Payload::Category(_), Some(_)) | (Payload::Comparison(_), None) => Ok(()),
            (Payload::Category(_), None) => {
                Err(RatingError::Invalid("category rating needs an arm".into()))
            }
            (Payload::Comparison(_), Some(_)) => Err(RatingError::Invalid(
                "comparison must not name an arm".into(),
            )),
        }
    }
}

/// Latest event per key over a slice of events.
pub fn effective(events: &[RatingEvent]) -> BTreeMap<EventKey, &RatingEvent> {
    let mut out: BTreeMap<EventKey, &RatingEvent> = BTreeMap::new();
    for e in events {
        let key = e.key();
        match out.get(&key) {
            Some(prev) if prev.seq > e.seq => {}
            _ => {
                out.insert(key, e);
            }
        }
    }
    out
}

/// Effective events ordered by sequence number.
pub fn effective_events(events: &[RatingEvent]) -> Vec<RatingEvent> {
    let mut v: Vec<RatingEvent> = effective(events).into_values().cloned().collect();
    v.sort_by_key(|e| e.seq);
    v
}

/// Effective ratings resolved to one verdict per slice: a consensus event
/// wins, otherwise the first roster rater who rated the key.
pub struct Resolved<'a> {
    eff: BTreeMap<EventKey, &'a RatingEvent>,
    order: Vec<String>,
}

impl<'a> Resolved<'a> {
    pub fn new(plan: &SessionPlan, events: &'a [RatingEvent]) -> Self {
        let mut order = vec![CONSENSUS_RATER.to_string()];
        order.extend(plan.raters.iter().cloned());
        Resolved {
            eff: effective(events),
            order,
        }
    }

    pub fn by_rater(
        &self,
        rater: &str,
        patient_id: &str,
        slice_index: usize,
        target_class: TargetClass,
        arm: Option<Arm>,
    ) -> Option<&'a RatingEvent> {
        self.eff
            .get(&EventKey {
                rater_id: rater.to_string(),
                patient_id: patient_id.to_string(),
                slice_index,
                target_class,
                arm,
            })
            .copied()
    }

    fn resolve(
        &self,
        patient_id: &str,
        slice_index: usize,
        class: TargetClass,
        arm: Option<Arm>,
    ) -> Option<&'a RatingEvent> {
        self.order
            .iter()
            .find_map(|r| self.by_rater(r, patient_id, slice_index, class, arm))
    }

    pub fn category(
        &self,
        patient_id: &str,
        slice_index: usize,
        class: TargetClass,
        arm: Arm,
    ) -> Option<RatingCategory> {
        self.resolve(patient_id, slice_index, class, Some(arm))
            .and_then(RatingEvent::category)
    }

    pub fn comparison(
        &self,
        patient_id: &str,
        slice_index: usize,
        class: TargetClass,
    ) -> Option<ComparisonChoice> {
        self.resolve(patient_id, slice_index, class, None)
            .and_then(RatingEvent::choice)
    }
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

struct Appender {
    file: Option<File>,
    next_seq: u64,
}

/// JSON-lines log. Appends serialize through one mutex; readers take
/// cheap snapshots.
pub struct EventLog {
    session_id: String,
    path: Option<PathBuf>,
    appender: Mutex<Appender>,
    snapshot: RwLock<Arc<Vec<RatingEvent>>>,
}

impl EventLog {
    pub fn in_memory(session_id: impl Into<String>) -> Self {
        EventLog {
            session_id: session_id.into(),
            path: None,
            appender: Mutex::new(Appender {
                file: None,
                next_seq: 1,
            }),
            snapshot: RwLock::new(Arc::new(Vec::new())),
        }
    }

    /// Opens or creates the log at `path`. A torn final line from an
    /// interrupted write is ignored.
    pub fn open(
        session_id: impl Into<String>,
        path: impl AsRef<Path>,
    ) -> Result<Self, RatingError> {
        let path = path.as_ref().to_path_buf();
        let mut events = Vec::new();
        if path.exists() {
            let lines: Vec<String> = BufReader::new(File::open(&path)?)
                .lines()
                .collect::<Result<_, _>>()?;
            let last = lines.len().saturating_sub(1);
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<RatingEvent>(line) {
                    Ok(e) => events.push(e),
                    Err(_) if i == last => {}
                    Err(e) => {
                        return Err(RatingError::Corrupt(format!(
                            "{}:{}: {e}",
                            path.display(),
                            i + 1
                        )))
                    }
                }
            }
        }
        let next_seq = events.iter().map(|e| e.seq).max().unwrap_or(0) + 1;
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(EventLog {
            session_id: session_id.into(),
            path: Some(path),
            appender: Mutex::new(Appender {
                file: Some(file),
                next_seq,
            }),
            snapshot: RwLock::new(Arc::new(events)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn snapshot(&self) -> Arc<Vec<RatingEvent>> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    pub fn append(&self, draft: EventDraft) -> Result<RatingEvent, RatingError> {
        self.append_checked(draft, |_| Ok(()))
    }

    /// Appends after `check` accepted the draft against the log as it
    /// stands under the appender lock.
    pub fn append_checked(
        &self,
        draft: EventDraft,
        check: impl FnOnce(&[RatingEvent]) -> Result<(), RatingError>,
    ) -> Result<RatingEvent, RatingError> {
        let mut app = self.appender.lock().expect("appender lock");
        check(&self.snapshot())?;
        let event = RatingEvent {
            session_id: self.session_id.clone(),
            rater_id: draft.rater_id,
            patient_id: draft.patient_id,
            slice_index: draft.slice_index,
            target_class: draft.target_class,
            arm: draft.arm,
            payload: draft.payload,
            timestamp_ms: now_ms(),
            seq: app.next_seq,
        };
        if let Some(file) = app.file.as_mut() {
            let mut line =
                serde_json::to_string(&event).map_err(|e| RatingError::Corrupt(e.to_string()))?;
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        app.next_seq += 1;
        let mut snap = self.snapshot.write().expect("snapshot lock");
        Arc::make_mut(&mut snap).push(event.clone());
        Ok(event)
    }
}
