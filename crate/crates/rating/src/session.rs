//! Live sessions: plan, event log and lazily loaded case volumes.

use infarct_core::volume::load_volume;
use infarct_core::MaskVolume;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use crate::analysis::comparison_eligible;
use crate::events::{EventDraft, EventLog, Payload, RatingEvent, Resolved};
use crate::model::{Arm, ComparisonChoice, Method, RatingCategory, TargetClass};
use crate::plan::{CaseEntry, ManifestEntry, SessionPlan, CONSENSUS_RATER};
use crate::render::{grayscale_png, overlay_png, to_base64, OverlayStyle};
use crate::RatingError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub manifest: Vec<ManifestEntry>,
    pub raters: Vec<String>,
    pub overlap_n: usize,
    pub seed: u64,
    #[serde(default)]
    pub session_id: Option<String>,
}

pub struct CaseVolumes {
    pub manual: MaskVolume,
    pub automatic: MaskVolume,
}

impl CaseVolumes {
    pub fn of(&self, method: Method) -> &MaskVolume {
        match method {
            Method::Manual => &self.manual,
            Method::Automatic => &self.automatic,
        }
    }
}

fn load_pair(entry: &ManifestEntry) -> Result<CaseVolumes, RatingError> {
    let read = |p: &str| {
        load_volume(p).map_err(|e| {
            RatingError::Invalid(format!(
                "patient {}: cannot read {p}: {e}",
                entry.patient_id
            ))
        })
    };
    let manual = read(&entry.manual_path)?;
    let automatic = read(&entry.auto_path)?;
    if manual.dims() != automatic.dims() {
        return Err(RatingError::Invalid(format!(
            "patient {}: segmentations differ in size",
            entry.patient_id
        )));
    }
    Ok(CaseVolumes { manual, automatic })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submitted {
    pub a: Option<RatingCategory>,
    pub b: Option<RatingCategory>,
    pub comparison: Option<ComparisonChoice>,
}

/// Everything a rater needs for one task. Arm identities stay hidden.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskView {
    pub patient_id: String,
    pub slice_index: usize,
    pub slice_count: usize,
    pub target_class: TargetClass,
    /// Base64 PNG of the slice image.
    pub image_png: String,
    pub overlay_a_png: String,
    pub overlay_b_png: String,
    pub submitted: Submitted,
    /// `None` until both arms are rated.
    pub comparison_eligible: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPayload {
    pub session_id: String,
    pub rater_id: String,
    pub cursor: usize,
    pub total: usize,
    pub done: bool,
    pub task: Option<TaskView>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub rater_id: String,
    pub total_tasks: usize,
    pub arm_ratings: usize,
    pub comparisons: usize,
    /// Tasks with both arms rated and, when eligible, a comparison.
    pub completed_tasks: usize,
}

pub struct Session {
    pub plan: SessionPlan,
    pub log: EventLog,
    volumes: Mutex<HashMap<String, Arc<CaseVolumes>>>,
}

impl Session {
    pub fn new(plan: SessionPlan, log: EventLog) -> Self {
        Session {
            plan,
            log,
            volumes: Mutex::new(HashMap::new()),
        }
    }

    fn volumes(&self, patient_id: &str) -> Result<Arc<CaseVolumes>, RatingError> {
        if let Some(v) = self.volumes.lock().expect("volume cache").get(patient_id) {
            return Ok(v.clone());
        }
        let case = self
            .plan
            .case(patient_id)
            .ok_or_else(|| RatingError::NotFound(format!("patient {patient_id:?}")))?;
        let pair = Arc::new(load_pair(&ManifestEntry {
            patient_id: case.patient_id.clone(),
            manual_path: case.manual_path.clone(),
            auto_path: case.auto_path.clone(),
        })?);
        self.volumes
            .lock()
            .expect("volume cache")
            .insert(patient_id.to_string(), pair.clone());
        Ok(pair)
    }

    fn own_categories(
        &self,
        events: &[RatingEvent],
        rater: &str,
        p: &str,
        slice: usize,
        class: TargetClass,
    ) -> [Option<RatingCategory>; 2] {
        let resolved = Resolved::new(&self.plan, events);
        Arm::BOTH.map(|arm| {
            if rater == CONSENSUS_RATER {
                resolved.category(p, slice, class, arm)
            } else {
                resolved
                    .by_rater(rater, p, slice, class, Some(arm))
                    .and_then(RatingEvent::category)
            }
        })
    }

    pub fn task(
        &self,
        rater: &str,
        cursor: usize,
        style: &OverlayStyle,
    ) -> Result<TaskPayload, RatingError> {
        let tasks = self
            .plan
            .tasks_for(rater)
            .ok_or_else(|| RatingError::NotFound(format!("rater {rater:?}")))?;
        let mut payload = TaskPayload {
            session_id: self.plan.session_id.clone(),
            rater_id: rater.to_string(),
            cursor,
            total: tasks.len(),
            done: cursor >= tasks.len(),
            task: None,
        };
        if payload.done {
            return Ok(payload);
        }
        let t = &tasks[cursor];
        let vols = self.volumes(&t.patient_id)?;
        let assignment = self.plan.assignment(&t.patient_id);
        let events = self.log.snapshot();
        let [a, b] =
            self.own_categories(&events, rater, &t.patient_id, t.slice_index, t.target_class);
        let comparison = Resolved::new(&self.plan, &events)
            .by_rater(rater, &t.patient_id, t.slice_index, t.target_class, None)
            .and_then(RatingEvent::choice);
        payload.task = Some(TaskView {
            patient_id: t.patient_id.clone(),
            slice_index: t.slice_index,
            slice_count: vols.manual.dims().nz,
            target_class: t.target_class,
            image_png: to_base64(&grayscale_png(&vols.manual.slice_image(t.slice_index))),
            overlay_a_png: to_base64(&overlay_png(
                &vols
                    .of(assignment.method_of(Arm::A))
                    .slice_labels(t.slice_index),
                style,
            )),
            overlay_b_png: to_base64(&overlay_png(
                &vols
                    .of(assignment.method_of(Arm::B))
                    .slice_labels(t.slice_index),
                style,
            )),
            submitted: Submitted { a, b, comparison },
            comparison_eligible: comparison_eligible(a, b).ok(),
        });
        Ok(payload)
    }

    /// Validates and appends a rating or comparison. Comparisons need both
    /// arms rated by the same rater on an eligible slice.
    pub fn submit(&self, draft: EventDraft) -> Result<RatingEvent, RatingError> {
        draft.validate(&self.plan)?;
        match draft.payload {
            Payload::Category(_) => self.log.append(draft),
            Payload::Comparison(_) => {
                let (rater, p, slice, class) = (
                    draft.rater_id.clone(),
                    draft.patient_id.clone(),
                    draft.slice_index,
                    draft.target_class,
                );
                self.log.append_checked(draft, |events| {
                    let [a, b] = self.own_categories(events, &rater, &p, slice, class);
                    match comparison_eligible(a, b) {
                        Ok(true) => Ok(()),
                        Ok(false) => Err(RatingError::Conflict(
                            "both arms rated true negative; slice is excluded from comparison"
                                .into(),
                        )),
                        Err(e) => Err(RatingError::Conflict(e.to_string())),
                    }
                })
            }
        }
    }

    pub fn progress(&self, rater: &str) -> Result<Progress, RatingError> {
        let tasks = self
            .plan
            .tasks_for(rater)
            .ok_or_else(|| RatingError::NotFound(format!("rater {rater:?}")))?;
        let events = self.log.snapshot();
        let resolved = Resolved::new(&self.plan, &events);
        let mut p = Progress {
            rater_id: rater.to_string(),
            total_tasks: tasks.len(),
            arm_ratings: 0,
            comparisons: 0,
            completed_tasks: 0,
        };
        for t in &tasks {
            let [a, b] =
                self.own_categories(&events, rater, &t.patient_id, t.slice_index, t.target_class);
            p.arm_ratings += usize::from(a.is_some()) + usize::from(b.is_some());
            let compared = resolved
                .by_rater(rater, &t.patient_id, t.slice_index, t.target_class, None)
                .is_some();
            p.comparisons += usize::from(compared);
            match comparison_eligible(a, b) {
                Ok(false) => p.completed_tasks += 1,
                Ok(true) if compared => p.completed_tasks += 1,
                _ => {}
            }
        }
        Ok(p)
    }
}

/// All sessions, optionally persisted under `<data_dir>/sessions/<id>/`.
pub struct SessionStore {
    data_dir: Option<PathBuf>,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

impl SessionStore {
    pub fn in_memory() -> Self {
        SessionStore {
            data_dir: None,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    /// Opens a data directory and reloads every session found in it.
    pub fn open(data_dir: impl AsRef<Path>) -> Result<Self, RatingError> {
        let root = data_dir.as_ref().join("sessions");
        std::fs::create_dir_all(&root)?;
        let mut sessions = HashMap::new();
        for entry in std::fs::read_dir(&root)? {
            let dir = entry?.path();
            let plan_path = dir.join("plan.json");
            if !plan_path.is_file() {
                continue;
            }
            let plan: SessionPlan = serde_json::from_str(&std::fs::read_to_string(&plan_path)?)
                .map_err(|e| RatingError::Corrupt(format!("{}: {e}", plan_path.display())))?;
            let log = EventLog::open(&plan.session_id, dir.join("events.jsonl"))?;
            sessions.insert(plan.session_id.clone(), Arc::new(Session::new(plan, log)));
        }
        Ok(SessionStore {
            data_dir: Some(data_dir.as_ref().to_path_buf()),
            sessions: RwLock::new(sessions),
        })
    }

    pub fn get(&self, id: &str) -> Result<Arc<Session>, RatingError> {
        self.sessions
            .read()
            .expect("session map")
            .get(id)
            .cloned()
            .ok_or_else(|| RatingError::NotFound(format!("session {id:?}")))
    }

    /// Reads every manifest volume, builds the plan and persists it.
    pub fn create(&self, req: CreateSession) -> Result<Arc<Session>, RatingError> {
        let mut cases = Vec::with_capacity(req.manifest.len());
        for entry in &req.manifest {
            let pair = load_pair(entry)?;
            cases.push(CaseEntry {
                patient_id: entry.patient_id.clone(),
                manual_path: entry.manual_path.clone(),
                auto_path: entry.auto_path.clone(),
                slices: pair.manual.dims().nz,
            });
        }
        let id = req
            .session_id
            .unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
        if id.is_empty()
            || !id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(RatingError::Invalid(format!("invalid session id {id:?}")));
        }
        let plan = SessionPlan::build(id, cases, req.raters, req.overlap_n, req.seed)?;
        self.insert_plan(plan)
    }

    /// Registers an already built plan.
    pub fn insert_plan(&self, plan: SessionPlan) -> Result<Arc<Session>, RatingError> {
        let mut map = self.sessions.write().expect("session map");
        if map.contains_key(&plan.session_id) {
            return Err(RatingError::Conflict(format!(
                "session {:?} exists",
                plan.session_id
            )));
        }
        let log = match &self.data_dir {
            Some(root) => {
                let dir = root.join("sessions").join(&plan.session_id);
                std::fs::create_dir_all(&dir)?;
                let text = serde_json::to_string_pretty(&plan)
                    .map_err(|e| RatingError::Corrupt(e.to_string()))?;
                std::fs::write(dir.join("plan.json"), text + "\n")?;
                EventLog::open(&plan.session_id, dir.join("events.jsonl"))?
            }
            None => EventLog::in_memory(&plan.session_id),
        };
        let session = Arc::new(Session::new(plan, log));
        map.insert(session.plan.session_id.clone(), session.clone());
        Ok(session)
    }
}
